//! Scalar coefficient expressions over the variables `x1..xN`.
//!
//! Drift, diffusion, boundary data, running cost and implicit-domain level
//! sets are all plain closed-form expressions parsed once at configuration
//! time and evaluated pointwise by the samplers and solvers. The grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := unary ('^' factor)?          // '^' is right-associative
//! unary  := '-' unary | atom
//! atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `NUMBER` is a decimal literal with optional exponent. `IDENT` is either a
//! variable `x1..xN` (bounded by the dimension passed to [`parse`]) or one of
//! the function names `exp`, `log`, `sqrt`, `abs`, `sin`, `cos` (unary) and
//! `min`, `max` (binary).
//!
//! Evaluation never fails: division by zero and domain errors (negative
//! square roots, logs of negative numbers) produce `NaN`, which propagates
//! through every operator including `min`/`max`. Callers that cannot accept
//! non-finite coefficients check the result.

use std::fmt;

use thiserror::Error;

/// Why a source string was rejected, with the byte offset of the offending
/// token. Offsets index into the original string, so they stay meaningful
/// for multi-line configuration values.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("`{name}` takes {expected} argument(s), got {got} (at byte {offset})")]
    ArityMismatch {
        offset: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("variable x{index} out of range: dimension is {max_dim} (at byte {offset})")]
    VariableOutOfRange {
        offset: usize,
        index: usize,
        max_dim: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::ArityMismatch { offset, .. }
            | ParseError::VariableOutOfRange { offset, .. } => *offset,
        }
    }
}

/// Built-in functions. `Min` and `Max` are binary, the rest unary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    /// Zero-based variable index; `x1` is `Var(0)`.
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed, immutable expression tree. Structural equality (`==`) is what
/// the round-trip guarantee is stated in: `parse(format(e)) == e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

/// Parse `text` against dimension `max_dim`: variables `x1..x{max_dim}` are
/// in scope, anything past that is rejected up front rather than at
/// evaluation time.
pub fn parse(text: &str, max_dim: usize) -> Result<Expression, ParseError> {
    let mut parser = Parser::new(text, max_dim);
    let root = parser.parse_expr()?;
    parser.expect_end()?;
    Ok(Expression { root })
}

impl Expression {
    /// Constant expression, mostly useful as a default (`0` running cost).
    pub fn constant(value: f64) -> Expression {
        Expression {
            root: Node::Const(value),
        }
    }

    /// Evaluate at `point`. The caller supplies at least as many coordinates
    /// as the dimension the expression was parsed against.
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        eval(&self.root, point)
    }

    /// Largest one-based variable index that occurs, or 0 for a closed
    /// expression. Used by configuration validation to cross-check
    /// dimensions.
    pub fn max_var(&self) -> usize {
        max_var(&self.root)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root)
    }
}

fn eval(node: &Node, point: &[f64]) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(i) => point[*i],
        Node::Neg(a) => -eval(a, point),
        Node::Add(a, b) => eval(a, point) + eval(b, point),
        Node::Sub(a, b) => eval(a, point) - eval(b, point),
        Node::Mul(a, b) => eval(a, point) * eval(b, point),
        Node::Div(a, b) => {
            let d = eval(b, point);
            if d == 0.0 {
                f64::NAN
            } else {
                eval(a, point) / d
            }
        }
        Node::Pow(a, b) => eval(a, point).powf(eval(b, point)),
        Node::Call(func, args) => {
            let a = eval(&args[0], point);
            match func {
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Min | Func::Max => {
                    let b = eval(&args[1], point);
                    // f64::min/max would swallow a NaN operand; these must
                    // propagate it instead.
                    if a.is_nan() || b.is_nan() {
                        f64::NAN
                    } else if *func == Func::Min {
                        a.min(b)
                    } else {
                        a.max(b)
                    }
                }
            }
        }
    }
}

fn max_var(node: &Node) -> usize {
    match node {
        Node::Const(_) => 0,
        Node::Var(i) => i + 1,
        Node::Neg(a) => max_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            max_var(a).max(max_var(b))
        }
        Node::Call(_, args) => args.iter().map(max_var).max().unwrap_or(0),
    }
}

// Printing levels, used to insert the minimal parentheses that make the
// output reparse to the same tree: additive 1, multiplicative 2, unary
// minus 3, power 4, atoms 5. The grammar binds unary minus tighter than a
// following '^' ("-x^2" is "(-x)^2"), so a negation may sit bare in a power
// base, while a power under negation must be parenthesized.
fn level(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(..) => 3,
        Node::Pow(..) => 4,
        Node::Const(_) | Node::Var(_) | Node::Call(..) => 5,
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node) -> fmt::Result {
    match node {
        Node::Const(c) => write!(f, "{}", c),
        Node::Var(i) => write!(f, "x{}", i + 1),
        Node::Neg(a) => {
            write!(f, "-")?;
            // Bare under '-': another negation or an atom. Anything else
            // would re-associate ("-a*b" parses as "(-a)*b").
            write_child(f, a, |l| l == 3 || l == 5)
        }
        Node::Add(a, b) => {
            write_child(f, a, |l| l >= 1)?;
            write!(f, " + ")?;
            write_child(f, b, |l| l > 1)
        }
        Node::Sub(a, b) => {
            write_child(f, a, |l| l >= 1)?;
            write!(f, " - ")?;
            write_child(f, b, |l| l > 1)
        }
        Node::Mul(a, b) => {
            write_child(f, a, |l| l >= 2)?;
            write!(f, "*")?;
            write_child(f, b, |l| l > 2)
        }
        Node::Div(a, b) => {
            write_child(f, a, |l| l >= 2)?;
            write!(f, "/")?;
            write_child(f, b, |l| l > 2)
        }
        Node::Pow(a, b) => {
            // Base must be a 'unary' (negation chain or atom); exponent is a
            // 'factor', so a right-nested power stays bare.
            write_child(f, a, |l| l == 3 || l == 5)?;
            write!(f, "^")?;
            write_child(f, b, |l| l >= 3)
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (k, arg) in args.iter().enumerate() {
                if k > 0 {
                    write!(f, ", ")?;
                }
                write_node(f, arg)?;
            }
            write!(f, ")")
        }
    }
}

fn write_child(
    f: &mut fmt::Formatter<'_>,
    node: &Node,
    bare: impl Fn(u8) -> bool,
) -> fmt::Result {
    if bare(level(node)) {
        write_node(f, node)
    } else {
        write!(f, "(")?;
        write_node(f, node)?;
        write!(f, ")")
    }
}

// ---------------------------------------------------------------------------
// Recursive-descent parser over bytes. The input is ASCII in practice;
// offsets are byte offsets either way.

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    max_dim: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, max_dim: usize) -> Parser<'a> {
        Parser {
            src: text.as_bytes(),
            pos: 0,
            max_dim,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.syntax(self.pos, format!("unexpected `{}`", c as char)),
        }
    }

    fn parse_expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.parse_term()?;
        while let Some(op) = self.peek() {
            match op {
                b'+' => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(rhs));
                }
                b'-' => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.parse_factor()?;
        while let Some(op) = self.peek() {
            match op {
                b'*' => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
                }
                b'/' => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn parse_factor(&mut self) -> Result<Node, ParseError> {
        let base = self.parse_unary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.parse_factor()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.parse_unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => self.syntax(self.pos, "unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    Ok(inner)
                } else {
                    self.syntax(self.pos, "expected `)`")
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.parse_ident(),
            Some(c) => self.syntax(self.pos, format!("unexpected `{}`", c as char)),
        }
    }

    fn parse_number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos == start || self.src[start..self.pos] == *b"." {
            return self.syntax(start, "expected number");
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                return self.syntax(mark, "malformed exponent");
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        match text.parse::<f64>() {
            Ok(value) => Ok(Node::Const(value)),
            Err(_) => self.syntax(start, format!("malformed number `{}`", text)),
        }
    }

    fn parse_ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");

        if let Some(index) = variable_index(name) {
            if index == 0 || index > self.max_dim {
                return Err(ParseError::VariableOutOfRange {
                    offset: start,
                    index,
                    max_dim: self.max_dim,
                });
            }
            return Ok(Node::Var(index - 1));
        }

        if let Some(func) = Func::from_name(name) {
            if self.peek() != Some(b'(') {
                return self.syntax(self.pos, format!("expected `(` after `{}`", name));
            }
            self.pos += 1;
            let mut args = vec![self.parse_expr()?];
            while self.peek() == Some(b',') {
                self.pos += 1;
                args.push(self.parse_expr()?);
            }
            if self.peek() != Some(b')') {
                return self.syntax(self.pos, "expected `)`");
            }
            self.pos += 1;
            if args.len() != func.arity() {
                return Err(ParseError::ArityMismatch {
                    offset: start,
                    name: name.to_string(),
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            return Ok(Node::Call(func, args));
        }

        Err(ParseError::UnknownIdentifier {
            offset: start,
            name: name.to_string(),
        })
    }
}

/// `x<k>` with a pure decimal suffix; anything else is not a variable.
fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval_str(text: &str, dim: usize, point: &[f64]) -> f64 {
        parse(text, dim).unwrap().evaluate(point)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval_str("x1 + 2*x2", 2, &[1.0, 3.0]), 7.0);
        assert_eq!(eval_str("2 + 3*4", 0, &[]), 14.0);
        assert_eq!(eval_str("(2 + 3)*4", 0, &[]), 20.0);
        assert_eq!(eval_str("2 - 3 - 4", 0, &[]), -5.0);
        assert_eq!(eval_str("12/4/3", 0, &[]), 1.0);
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(eval_str("2^3^2", 0, &[]), 512.0);
        assert_eq!(eval_str("(2^3)^2", 0, &[]), 64.0);
        assert_eq!(eval_str("2^-2", 0, &[]), 0.25);
    }

    #[test]
    fn unary_minus_binds_before_power() {
        // factor := unary ('^' factor)?  puts the sign inside the base.
        assert_eq!(eval_str("-2^2", 0, &[]), 4.0);
        assert_eq!(eval_str("-(2^2)", 0, &[]), -4.0);
        assert_eq!(eval_str("--2", 0, &[]), 2.0);
    }

    #[test]
    fn functions_evaluate() {
        assert_eq!(eval_str("min(3, x1)", 1, &[5.0]), 3.0);
        assert_eq!(eval_str("max(3, x1)", 1, &[5.0]), 5.0);
        assert_eq!(eval_str("abs(-4)", 0, &[]), 4.0);
        assert!((eval_str("exp(log(7))", 0, &[]) - 7.0).abs() < 1e-12);
        assert!((eval_str("sin(0) + cos(0)", 0, &[]) - 1.0).abs() < 1e-15);
        assert_eq!(eval_str("sqrt(2.25)", 0, &[]), 1.5);
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(eval_str("1.5e2", 0, &[]), 150.0);
        assert_eq!(eval_str(".5E+1", 0, &[]), 5.0);
        assert_eq!(eval_str("2.e-1", 0, &[]), 0.2);
    }

    #[test]
    fn nan_propagation() {
        assert!(eval_str("sqrt(x1)", 1, &[-1.0]).is_nan());
        assert!(eval_str("1/x1", 1, &[0.0]).is_nan());
        assert!(eval_str("log(-1)", 0, &[]).is_nan());
        assert!(eval_str("min(1, sqrt(-1))", 0, &[]).is_nan());
        assert!(eval_str("max(1, 0/0)", 0, &[]).is_nan());
        assert!(eval_str("1 + sqrt(-1)", 0, &[]).is_nan());
    }

    #[test]
    fn syntax_error_carries_offset() {
        let err = parse("x1 +", 1).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 4, .. }), "{err:?}");

        let err = parse("2 * (x1", 1).unwrap_err();
        assert_eq!(err.offset(), 7);
    }

    #[test]
    fn unknown_identifier_rejected() {
        let err = parse("foo(x1)", 1).unwrap_err();
        assert!(
            matches!(err, ParseError::UnknownIdentifier { offset: 0, ref name } if name == "foo"),
            "{err:?}"
        );
        // A bare function name without arguments is a syntax error, not a
        // variable reference.
        assert!(matches!(parse("exp", 0), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn arity_mismatch_rejected() {
        let err = parse("min(x1)", 1).unwrap_err();
        assert!(
            matches!(
                err,
                ParseError::ArityMismatch { expected: 2, got: 1, .. }
            ),
            "{err:?}"
        );
        let err = parse("exp(1, 2)", 0).unwrap_err();
        assert!(
            matches!(
                err,
                ParseError::ArityMismatch { expected: 1, got: 2, .. }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn variable_range_checked_at_parse_time() {
        let err = parse("x3", 2).unwrap_err();
        assert!(
            matches!(err, ParseError::VariableOutOfRange { index: 3, max_dim: 2, .. }),
            "{err:?}"
        );
        assert!(parse("x0", 2).is_err());
        assert!(parse("x2", 2).is_ok());
    }

    #[test]
    fn max_var_reports_dimension_use() {
        assert_eq!(parse("3 + exp(2)", 0).unwrap().max_var(), 0);
        assert_eq!(parse("x1*x3", 5).unwrap().max_var(), 3);
    }

    #[test]
    fn format_round_trips_handwritten_cases() {
        for text in [
            "x1 + 2*x2",
            "-x1^2",
            "-(x1^2)",
            "(x1 + 1)*(x1 - 1)",
            "x1/(x2*x3)",
            "2^3^2",
            "(2^3)^2",
            "min(x1, max(x2, 0.5))",
            "-(x1 + x2)",
            "1 - (2 - 3)",
            "x1*-x2",
            "exp(-x1*x1/2)",
        ] {
            let e = parse(text, 3).unwrap();
            let printed = format!("{}", e);
            let reparsed = parse(&printed, 3).unwrap();
            assert_eq!(e, reparsed, "`{text}` printed as `{printed}`");
        }
    }

    // Strategy over ASTs reachable from the grammar: constants are
    // non-negative (the parser builds negatives as Neg(Const)).
    fn node_strategy() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0usize..3).prop_map(Node::Var),
            (0.0f64..1000.0).prop_map(Node::Const),
            Just(Node::Const(0.0)),
            Just(Node::Const(2.5)),
        ];
        leaf.prop_recursive(6, 64, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Node::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Node::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Node::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Node::Div(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Node::Pow(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Node::Call(Func::Min, vec![a, b])),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Node::Call(Func::Max, vec![a, b])),
                inner.clone().prop_map(|a| Node::Call(Func::Exp, vec![a])),
                inner.clone().prop_map(|a| Node::Call(Func::Abs, vec![a])),
                inner.prop_map(|a| Node::Call(Func::Sqrt, vec![a])),
            ]
        })
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(root in node_strategy()) {
            let e = Expression { root };
            let printed = format!("{}", e);
            let reparsed = parse(&printed, 3).expect("formatted output must parse");
            prop_assert_eq!(&e, &reparsed, "printed as `{}`", printed);
        }

        #[test]
        fn evaluation_agrees_after_round_trip(root in node_strategy(),
                                              x in -10.0f64..10.0,
                                              y in -10.0f64..10.0,
                                              z in -10.0f64..10.0) {
            let e = Expression { root };
            let reparsed = parse(&format!("{}", e), 3).unwrap();
            let a = e.evaluate(&[x, y, z]);
            let b = reparsed.evaluate(&[x, y, z]);
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }

        #[test]
        fn fuzzed_inputs_never_panic(text in "[x0-9+*/^(), .eE_a-z-]{0,40}") {
            let _ = parse(&text, 3);
        }
    }
}
