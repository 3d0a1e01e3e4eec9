//! Line-oriented program language shared by the planner and the runtime.
//!
//! One statement per line, of the shape `OUTVAR=OPNAME(key=value,...)`.
//! Argument values are single-quoted string literals, numeric literals,
//! `true`/`false`, or bare identifiers (variable references). No nesting.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::registry::ModuleRegistry;
use crate::runtime::value::ValueTag;

/// The designated terminal operation of every executable program.
pub const RESULT_OP: &str = "RESULT";

#[derive(Debug, Error, PartialEq)]
pub enum DslError {
    #[error("empty program")]
    EmptyProgram,
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate output variable `{var}` at line {line}")]
    DuplicateOutput { var: String, line: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArgValue {
    /// Reference to a declared input or an earlier step's output.
    Var(String),
    Str(String),
    Num(f64),
    Bool(bool),
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Var(v) => write!(f, "{v}"),
            ArgValue::Str(s) => write!(f, "'{s}'"),
            ArgValue::Num(n) => write!(f, "{n}"),
            ArgValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    pub op_name: String,
    /// Ordered named arguments; order is preserved through serialization.
    pub args: Vec<(String, ArgValue)>,
    pub out_var: String,
    pub line_no: usize,
}

impl Step {
    pub fn arg(&self, name: &str) -> Option<&ArgValue> {
        self.args.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Canonical single-line rendering, `OUT=OP(k=v,...)`.
    pub fn render(&self) -> String {
        let args: Vec<String> = self.args.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}={}({})", self.out_var, self.op_name, args.join(","))
    }
}

// Structural equality: line numbers are diagnostics, not structure.
impl PartialEq for Step {
    fn eq(&self, other: &Self) -> bool {
        self.op_name == other.op_name && self.args == other.args && self.out_var == other.out_var
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Program {
    steps: Vec<Step>,
    source_text: String,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps
    }
}

impl Program {
    /// Builds a program from steps. Empty programs are unrepresentable.
    pub fn from_steps(steps: Vec<Step>) -> Result<Program, DslError> {
        if steps.is_empty() {
            return Err(DslError::EmptyProgram);
        }
        for (i, s) in steps.iter().enumerate() {
            if steps[..i].iter().any(|p| p.out_var == s.out_var) {
                return Err(DslError::DuplicateOutput {
                    var: s.out_var.clone(),
                    line: s.line_no,
                });
            }
        }
        let source_text = steps
            .iter()
            .map(Step::render)
            .collect::<Vec<_>>()
            .join("\n");
        Ok(Program { steps, source_text })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    /// The final step, which validation requires to be `RESULT`.
    pub fn terminal(&self) -> &Step {
        self.steps.last().expect("programs are non-empty")
    }
}

struct Scanner<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    _src: &'a str,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Scanner {
            chars: src.chars().collect(),
            pos: 0,
            line,
            _src: src,
        }
    }

    fn err(&self, msg: impl Into<String>) -> DslError {
        DslError::Syntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn expect(&mut self, want: char) -> Result<(), DslError> {
        match self.bump() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(self.err(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.err(format!("expected `{want}`, found end of line"))),
        }
    }

    fn ident(&mut self) -> Result<String, DslError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected identifier"));
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        if s.chars().next().unwrap().is_ascii_digit() {
            return Err(self.err(format!("identifier `{s}` may not start with a digit")));
        }
        Ok(s)
    }

    fn arg_value(&mut self) -> Result<ArgValue, DslError> {
        match self.peek() {
            Some('\'') => {
                self.bump();
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if c == '\'' {
                        break;
                    }
                    self.pos += 1;
                }
                if self.peek() != Some('\'') {
                    return Err(self.err("unterminated string literal"));
                }
                let s: String = self.chars[start..self.pos].iter().collect();
                self.bump();
                Ok(ArgValue::Str(s))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E') {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                let n: f64 = text
                    .parse()
                    .map_err(|_| self.err(format!("bad numeric literal `{text}`")))?;
                if !n.is_finite() {
                    return Err(self.err(format!("non-finite numeric literal `{text}`")));
                }
                Ok(ArgValue::Num(n))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let id = self.ident()?;
                match id.as_str() {
                    "true" => Ok(ArgValue::Bool(true)),
                    "false" => Ok(ArgValue::Bool(false)),
                    _ => Ok(ArgValue::Var(id)),
                }
            }
            Some(c) => Err(self.err(format!("unexpected `{c}` in argument value"))),
            None => Err(self.err("missing argument value")),
        }
    }
}

/// Parses program source text. One statement per non-blank line; statement
/// order and source line numbers are preserved.
pub fn parse_program(text: &str) -> Result<Program, DslError> {
    let mut steps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut sc = Scanner::new(line, line_no);
        let out_var = sc.ident()?;
        sc.expect('=')?;
        let op_name = sc.ident()?;
        sc.expect('(')?;
        let mut args: Vec<(String, ArgValue)> = Vec::new();
        if sc.peek() != Some(')') {
            loop {
                let key = sc.ident()?;
                sc.expect('=')?;
                let value = sc.arg_value()?;
                if args.iter().any(|(k, _)| *k == key) {
                    return Err(sc.err(format!("duplicate argument `{key}`")));
                }
                args.push((key, value));
                match sc.peek() {
                    Some(',') => {
                        sc.bump();
                    }
                    _ => break,
                }
            }
        }
        sc.expect(')')?;
        if sc.peek().is_some() {
            return Err(sc.err("trailing characters after statement"));
        }
        if steps.iter().any(|s: &Step| s.out_var == out_var) {
            return Err(DslError::DuplicateOutput {
                var: out_var,
                line: line_no,
            });
        }
        steps.push(Step {
            op_name,
            args,
            out_var,
            line_no,
        });
    }
    if steps.is_empty() {
        return Err(DslError::EmptyProgram);
    }
    let source_text = text.to_string();
    Ok(Program { steps, source_text })
}

/// Canonical text form: one statement per line, arguments in stored order.
pub fn serialize(program: &Program) -> String {
    program
        .steps
        .iter()
        .map(Step::render)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ViolationKind {
    UnknownOp {
        op: String,
    },
    UnknownVariable {
        var: String,
    },
    MissingArgument {
        op: String,
        arg: String,
    },
    UnknownArgument {
        op: String,
        arg: String,
    },
    TypeMismatch {
        arg: String,
        expected: ValueTag,
        found: ValueTag,
    },
    NonTerminalResult {
        op: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "line {}: {:?}", v.line, v.kind)?;
        }
        Ok(())
    }
}

/// Checks a parsed program against the module registry and the declared
/// inputs. Violations are data; validation itself never fails.
pub fn validate(
    program: &Program,
    registry: &ModuleRegistry,
    inputs: &[(&str, ValueTag)],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut bound: Vec<(String, Option<ValueTag>)> = inputs
        .iter()
        .map(|(n, t)| (n.to_string(), Some(t.clone())))
        .collect();
    for step in program.steps() {
        let entry = registry.get(&step.op_name);
        if entry.is_none() {
            report.violations.push(Violation {
                line: step.line_no,
                kind: ViolationKind::UnknownOp {
                    op: step.op_name.clone(),
                },
            });
        }
        for (name, value) in &step.args {
            if let ArgValue::Var(var) = value {
                let known = bound.iter().find(|(n, _)| n == var);
                match known {
                    None => report.violations.push(Violation {
                        line: step.line_no,
                        kind: ViolationKind::UnknownVariable { var: var.clone() },
                    }),
                    Some((_, var_tag)) => {
                        if let (Some(entry), Some(var_tag)) = (entry, var_tag) {
                            if let Some(sig) = entry.signature.arg(name) {
                                if !sig.tag.accepts(var_tag) {
                                    report.violations.push(Violation {
                                        line: step.line_no,
                                        kind: ViolationKind::TypeMismatch {
                                            arg: name.clone(),
                                            expected: sig.tag.clone(),
                                            found: var_tag.clone(),
                                        },
                                    });
                                }
                            }
                        }
                    }
                }
            } else if let (Some(entry), Some(found)) = (entry, literal_tag(value)) {
                if let Some(sig) = entry.signature.arg(name) {
                    if !sig.tag.accepts(&found) {
                        report.violations.push(Violation {
                            line: step.line_no,
                            kind: ViolationKind::TypeMismatch {
                                arg: name.clone(),
                                expected: sig.tag.clone(),
                                found,
                            },
                        });
                    }
                }
            }
            if let Some(entry) = entry {
                if entry.signature.arg(name).is_none() {
                    report.violations.push(Violation {
                        line: step.line_no,
                        kind: ViolationKind::UnknownArgument {
                            op: step.op_name.clone(),
                            arg: name.clone(),
                        },
                    });
                }
            }
        }
        if let Some(entry) = entry {
            for sig_arg in &entry.signature.args {
                if step.arg(&sig_arg.name).is_none() {
                    report.violations.push(Violation {
                        line: step.line_no,
                        kind: ViolationKind::MissingArgument {
                            op: step.op_name.clone(),
                            arg: sig_arg.name.clone(),
                        },
                    });
                }
            }
        }
        let out_tag = entry.map(|e| e.signature.output.clone());
        bound.push((step.out_var.clone(), out_tag));
    }
    let last = program.terminal();
    if last.op_name != RESULT_OP {
        report.violations.push(Violation {
            line: last.line_no,
            kind: ViolationKind::NonTerminalResult {
                op: last.op_name.clone(),
            },
        });
    }
    report
}

fn literal_tag(value: &ArgValue) -> Option<ValueTag> {
    match value {
        ArgValue::Str(_) => Some(ValueTag::Text),
        ArgValue::Num(_) => Some(ValueTag::Number),
        ArgValue::Bool(_) => Some(ValueTag::Bool),
        ArgValue::Var(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::registry::ModuleRegistry;
    use crate::runtime::value::ValueTag;

    fn registry() -> ModuleRegistry {
        ModuleRegistry::builtin()
    }

    #[test]
    fn parses_single_loc_statement() {
        let p = parse_program("BOX0=LOC(image=IMAGE,object='nightstand')").unwrap();
        assert_eq!(p.steps().len(), 1);
        let s = &p.steps()[0];
        assert_eq!(s.op_name, "LOC");
        assert_eq!(s.out_var, "BOX0");
        assert_eq!(s.arg("image"), Some(&ArgValue::Var("IMAGE".into())));
        assert_eq!(
            s.arg("object"),
            Some(&ArgValue::Str("nightstand".into()))
        );
    }

    #[test]
    fn empty_source_is_an_error() {
        assert_eq!(parse_program(""), Err(DslError::EmptyProgram));
        assert_eq!(parse_program("  \n\n"), Err(DslError::EmptyProgram));
    }

    #[test]
    fn two_line_program_round_trips() {
        let src = "ANS0=VQA(image=IMAGE,question='what color?')\nFINAL=RESULT(var=ANS0)";
        let p = parse_program(src).unwrap();
        assert_eq!(p.steps().len(), 2);
        let again = parse_program(&serialize(&p)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn duplicate_output_variable_is_rejected() {
        let src = "A=VQA(image=IMAGE,question='x')\nA=VQA(image=IMAGE,question='y')";
        match parse_program(src) {
            Err(DslError::DuplicateOutput { var, line }) => {
                assert_eq!(var, "A");
                assert_eq!(line, 2);
            }
            other => panic!("expected duplicate-output error, got {other:?}"),
        }
    }

    #[test]
    fn unbalanced_quote_is_a_syntax_error() {
        let err = parse_program("A=LOC(image=IMAGE,object='nightstand)").unwrap_err();
        assert!(matches!(err, DslError::Syntax { line: 1, .. }));
    }

    #[test]
    fn trailing_garbage_is_a_syntax_error() {
        let err = parse_program("A=LOC(image=IMAGE)x").unwrap_err();
        assert!(matches!(err, DslError::Syntax { .. }));
    }

    #[test]
    fn string_literals_may_contain_spaces_and_commas() {
        let p = parse_program("A=VQA(image=IMAGE,question='what is on the table, left side?')")
            .unwrap();
        assert_eq!(
            p.steps()[0].arg("question"),
            Some(&ArgValue::Str("what is on the table, left side?".into()))
        );
    }

    #[test]
    fn numeric_literals_parse_exactly() {
        let p = parse_program("A=RESULT(var=IMAGE)\nB=EVAL(expr='1')").unwrap();
        assert_eq!(p.steps().len(), 2);
        let q = parse_program("A=COUNT(var=IMAGE)").unwrap();
        assert_eq!(q.steps()[0].arg("var"), Some(&ArgValue::Var("IMAGE".into())));
        let r = parse_program("A=F(x=-2.5e3,y=0.25,z=true)").unwrap();
        assert_eq!(r.steps()[0].arg("x"), Some(&ArgValue::Num(-2500.0)));
        assert_eq!(r.steps()[0].arg("y"), Some(&ArgValue::Num(0.25)));
        assert_eq!(r.steps()[0].arg("z"), Some(&ArgValue::Bool(true)));
    }

    #[test]
    fn validate_reports_unknown_variable_with_line() {
        let p = parse_program("A=VQA(image=IMAGE,question='q')\nFINAL=RESULT(var=BOX9)").unwrap();
        let report = validate(&p, &registry(), &[("IMAGE", ValueTag::Image)]);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].line, 2);
        assert_eq!(
            report.violations[0].kind,
            ViolationKind::UnknownVariable { var: "BOX9".into() }
        );
    }

    #[test]
    fn validate_accepts_well_formed_program() {
        let p = parse_program("ANS0=VQA(image=IMAGE,question='what color?')\nFINAL=RESULT(var=ANS0)")
            .unwrap();
        let report = validate(&p, &registry(), &[("IMAGE", ValueTag::Image)]);
        assert!(report.is_clean(), "{report}");
    }

    #[test]
    fn validate_reports_unknown_argument() {
        let p = parse_program("BOX0=LOC(image=IMAGE,object='a',question='b')\nFINAL=RESULT(var=BOX0)")
            .unwrap();
        let report = validate(&p, &registry(), &[("IMAGE", ValueTag::Image)]);
        assert!(report.violations.iter().any(|v| v.line == 1
            && v.kind
                == ViolationKind::UnknownArgument {
                    op: "LOC".into(),
                    arg: "question".into()
                }));
    }

    #[test]
    fn validate_reports_unknown_op_and_missing_result() {
        let p = parse_program("A=FROB(image=IMAGE)").unwrap();
        let report = validate(&p, &registry(), &[("IMAGE", ValueTag::Image)]);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::UnknownOp { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::NonTerminalResult { .. })));
    }

    #[test]
    fn empty_program_is_unrepresentable() {
        assert_eq!(Program::from_steps(vec![]), Err(DslError::EmptyProgram));
    }
}
