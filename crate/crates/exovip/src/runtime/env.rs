//! Write-once execution environments with structural sharing.
//!
//! Sibling branches of the trace tree extend a shared parent snapshot;
//! binding never mutates the parent, so branches may execute concurrently.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::value::Value;

#[derive(Debug, Error, PartialEq)]
#[error("variable `{var}` is already bound")]
pub struct RebindError {
    pub var: String,
}

/// Where a binding came from: the step's source line and the index of the
/// chosen candidate within that step's candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub step_line: usize,
    pub candidate_index: usize,
}

#[derive(Debug)]
struct Frame {
    parent: Option<Arc<Frame>>,
    name: String,
    value: Value,
    provenance: Option<Provenance>,
}

/// Immutable binding snapshot. Cloning is O(1); lookup walks the chain.
#[derive(Debug, Clone)]
pub struct Environment {
    frame: Option<Arc<Frame>>,
}

impl Environment {
    pub fn empty() -> Environment {
        Environment { frame: None }
    }

    /// Fresh environment with the designated image input bound.
    pub fn with_inputs(inputs: impl IntoIterator<Item = (String, Value)>) -> Environment {
        let mut env = Environment::empty();
        for (name, value) in inputs {
            env = env
                .bind(name, value, None)
                .expect("input names are distinct");
        }
        env
    }

    pub fn lookup(&self, name: &str) -> Option<&Value> {
        let mut cur = self.frame.as_deref();
        while let Some(f) = cur {
            if f.name == name {
                return Some(&f.value);
            }
            cur = f.parent.as_deref();
        }
        None
    }

    pub fn provenance(&self, name: &str) -> Option<Provenance> {
        let mut cur = self.frame.as_deref();
        while let Some(f) = cur {
            if f.name == name {
                return f.provenance;
            }
            cur = f.parent.as_deref();
        }
        None
    }

    /// Returns a child environment with one extra binding; `self` is unchanged.
    pub fn bind(
        &self,
        name: String,
        value: Value,
        provenance: Option<Provenance>,
    ) -> Result<Environment, RebindError> {
        if self.lookup(&name).is_some() {
            return Err(RebindError { var: name });
        }
        Ok(Environment {
            frame: Some(Arc::new(Frame {
                parent: self.frame.clone(),
                name,
                value,
                provenance,
            })),
        })
    }

    /// Bound names from innermost to outermost.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = self.frame.as_deref();
        while let Some(f) = cur {
            out.push(f.name.clone());
            cur = f.parent.as_deref();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_then_read() {
        let env = Environment::empty()
            .bind("BOX0".into(), Value::Number(1.0), None)
            .unwrap();
        assert_eq!(env.lookup("BOX0"), Some(&Value::Number(1.0)));
        assert_eq!(env.lookup("BOX1"), None);
    }

    #[test]
    fn rebind_is_an_error() {
        let env = Environment::empty()
            .bind("BOX0".into(), Value::Number(1.0), None)
            .unwrap();
        let err = env.bind("BOX0".into(), Value::Number(2.0), None).unwrap_err();
        assert_eq!(err.var, "BOX0");
    }

    #[test]
    fn siblings_do_not_observe_each_other() {
        let parent = Environment::empty()
            .bind("IMAGE".into(), Value::Text("img".into()), None)
            .unwrap();
        let a = parent
            .bind("BOX0".into(), Value::Number(1.0), None)
            .unwrap();
        let b = parent
            .bind("BOX0".into(), Value::Number(2.0), None)
            .unwrap();
        assert_eq!(parent.lookup("BOX0"), None);
        assert_eq!(a.lookup("BOX0"), Some(&Value::Number(1.0)));
        assert_eq!(b.lookup("BOX0"), Some(&Value::Number(2.0)));
    }
}
