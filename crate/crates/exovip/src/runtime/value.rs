//! Tagged runtime values passed between steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ValueError {
    #[error("box ({x0},{y0})-({x1},{y1}) is degenerate or inverted")]
    BadBox { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("box exceeds image bounds {width}x{height}")]
    BoxOutOfBounds { width: u32, height: u32 },
    #[error("list values must share one tag, found {first:?} and {other:?}")]
    MixedList { first: ValueTag, other: ValueTag },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueTag {
    Image,
    Box,
    Mask,
    Text,
    Number,
    Bool,
    List,
    /// Wildcard used in signatures of symbolic ops (RESULT, COUNT).
    Any,
}

impl ValueTag {
    pub fn accepts(&self, found: &ValueTag) -> bool {
        matches!(self, ValueTag::Any) || matches!(found, ValueTag::Any) || self == found
    }
}

/// Axis-aligned box in pixel coordinates, zero-indexed, `x1 > x0`, `y1 > y0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<BBox, ValueError> {
        if !(x1 > x0 && y1 > y0) || [x0, y0, x1, y1].iter().any(|c| !c.is_finite()) {
            return Err(ValueError::BadBox { x0, y0, x1, y1 });
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Opaque image: a content handle plus pixel dimensions. The engine never
/// decodes pixels; backends address images by handle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageHandle {
    pub handle: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "value", rename_all = "snake_case")]
pub enum Value {
    Image(ImageHandle),
    Box(BBox),
    Mask { handle: String },
    Text(String),
    Number(f64),
    Bool(bool),
    List(Vec<Value>),
}

impl Value {
    pub fn tag(&self) -> ValueTag {
        match self {
            Value::Image(_) => ValueTag::Image,
            Value::Box(_) => ValueTag::Box,
            Value::Mask { .. } => ValueTag::Mask,
            Value::Text(_) => ValueTag::Text,
            Value::Number(_) => ValueTag::Number,
            Value::Bool(_) => ValueTag::Bool,
            Value::List(_) => ValueTag::List,
        }
    }

    /// Homogeneous-list constructor.
    pub fn list(items: Vec<Value>) -> Result<Value, ValueError> {
        if let Some(first) = items.first() {
            let first_tag = first.tag();
            for item in &items[1..] {
                if item.tag() != first_tag {
                    return Err(ValueError::MixedList {
                        first: first_tag,
                        other: item.tag(),
                    });
                }
            }
        }
        Ok(Value::List(items))
    }

    /// Short human-readable rendering used in trace logs and rank prompts.
    pub fn summary(&self) -> String {
        match self {
            Value::Image(img) => format!("image<{}:{}x{}>", img.handle, img.width, img.height),
            Value::Box(b) => format!("box({:.0},{:.0},{:.0},{:.0})", b.x0, b.y0, b.x1, b.y1),
            Value::Mask { handle } => format!("mask<{handle}>"),
            Value::Text(t) => t.clone(),
            Value::Number(n) => format!("{n}"),
            Value::Bool(b) => format!("{b}"),
            Value::List(items) => {
                let inner: Vec<String> = items.iter().map(Value::summary).collect();
                format!("[{}]", inner.join(", "))
            }
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_image(&self) -> Option<&ImageHandle> {
        match self {
            Value::Image(img) => Some(img),
            _ => None,
        }
    }

    pub fn as_box(&self) -> Option<&BBox> {
        match self {
            Value::Box(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverted_box_is_rejected() {
        assert!(BBox::new(10.0, 10.0, 5.0, 20.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn mixed_list_is_rejected() {
        let err = Value::list(vec![Value::Number(1.0), Value::Text("x".into())]).unwrap_err();
        assert!(matches!(err, ValueError::MixedList { .. }));
    }
}
