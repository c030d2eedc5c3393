//! Text expressions with exact forward-mode derivatives.
//!
//! Drifts, interaction components and torus kernels all enter the pipeline as
//! strings over `x0..x{d-1}`. Parsed expressions compile to a flat tape; the
//! tape runs on `f64` for values, on duals for gradients/Jacobians and on
//! nested duals for Hessians, so derivative queries are exact up to floating
//! round-off and bit-deterministic.

pub mod ast;
pub mod dual;
mod parser;
mod tape;

pub use ast::{Ast, BinOp, Func};
pub use dual::{Dual, Scalar};

use tape::Tape;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("variable x{index} out of range at byte {offset}: dimension is {dim}")]
    VarOutOfRange {
        offset: usize,
        index: usize,
        dim: usize,
    },
    #[error("`{func}` takes exactly one argument (at byte {offset})")]
    Arity { offset: usize, func: String },
    #[error("domain violation in `{expr}`: {message}")]
    Domain { expr: String, message: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// A parsed expression bound to a declared dimension.
#[derive(Debug, Clone)]
pub struct Expr {
    ast: Ast,
    dim: usize,
}

/// Parse `text` as an expression in variables `x0..x{dimension-1}`.
pub fn parse(text: &str, dimension: usize) -> Result<Expr, ExprError> {
    let ast = parser::parse_ast(text, dimension)?;
    Ok(Expr {
        ast,
        dim: dimension,
    })
}

impl Expr {
    pub fn from_ast(ast: Ast, dimension: usize) -> Result<Expr, ExprError> {
        let need = ast.min_dimension();
        if need > dimension {
            return Err(ExprError::VarOutOfRange {
                offset: 0,
                index: need - 1,
                dim: dimension,
            });
        }
        Ok(Expr {
            ast,
            dim: dimension,
        })
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Canonical textual form; reparsing it reproduces the same AST.
    pub fn print(&self) -> String {
        self.ast.to_string()
    }
}

/// Output arity of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Scalar,
    Vector,
}

#[derive(Debug, Clone)]
struct Compiled {
    ast: Ast,
    tape: Tape,
}

/// An immutable, thread-safe evaluator for a scalar or vector field on R^d.
#[derive(Debug, Clone)]
pub struct FieldHandle {
    dim: usize,
    comps: Vec<Compiled>,
    arity: Arity,
}

pub const MAX_DIM: usize = 16;

impl FieldHandle {
    pub fn scalar(expr: &Expr) -> Result<FieldHandle, ExprError> {
        Self::build(std::slice::from_ref(expr), expr.dim, Arity::Scalar)
    }

    /// A vector field needs exactly `d` component expressions.
    pub fn vector(comps: &[Expr]) -> Result<FieldHandle, ExprError> {
        let dim = comps.first().map(|e| e.dim).unwrap_or(0);
        if comps.len() != dim {
            return Err(ExprError::Dimension {
                expected: dim,
                got: comps.len(),
            });
        }
        Self::build(comps, dim, Arity::Vector)
    }

    pub fn parse_scalar(text: &str, dimension: usize) -> Result<FieldHandle, ExprError> {
        let e = parse(text, dimension)?;
        Self::scalar(&e)
    }

    pub fn parse_vector(texts: &[&str], dimension: usize) -> Result<FieldHandle, ExprError> {
        let comps = texts
            .iter()
            .map(|t| parse(t, dimension))
            .collect::<Result<Vec<_>, _>>()?;
        Self::vector(&comps)
    }

    fn build(comps: &[Expr], dim: usize, arity: Arity) -> Result<FieldHandle, ExprError> {
        if dim > MAX_DIM {
            return Err(ExprError::Dimension {
                expected: MAX_DIM,
                got: dim,
            });
        }
        for c in comps {
            if c.dim != dim {
                return Err(ExprError::Dimension {
                    expected: dim,
                    got: c.dim,
                });
            }
        }
        let comps = comps
            .iter()
            .map(|e| {
                Ok(Compiled {
                    ast: e.ast.clone(),
                    tape: Tape::compile(&e.ast)?,
                })
            })
            .collect::<Result<Vec<_>, ExprError>>()?;
        Ok(FieldHandle { dim, comps, arity })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn component_asts(&self) -> impl Iterator<Item = &Ast> {
        self.comps.iter().map(|c| &c.ast)
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Value of a scalar field.
    pub fn eval_scalar(&self, x: &[f64]) -> Result<f64, ExprError> {
        debug_assert_eq!(self.arity, Arity::Scalar);
        self.check_point(x)?;
        self.comps[0].tape.eval(x)
    }

    /// Value of a vector field, written into `out`.
    pub fn eval_vector(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        debug_assert_eq!(self.arity, Arity::Vector);
        self.check_point(x)?;
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.tape.eval(x)?;
        }
        Ok(())
    }

    /// Gradient of a scalar field, written into `out` (length d).
    pub fn grad(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        debug_assert_eq!(self.arity, Arity::Scalar);
        self.check_point(x)?;
        let mut pt = [Dual::<f64>::constant(0.0); MAX_DIM];
        for (p, &v) in pt.iter_mut().zip(x) {
            *p = Dual::constant(v);
        }
        for j in 0..self.dim {
            pt[j].d = 1.0;
            out[j] = self.comps[0].tape.eval(&pt[..self.dim])?.d;
            pt[j].d = 0.0;
        }
        Ok(())
    }

    /// Jacobian of a vector field, row-major d×d: `out[i*d + j] = ∂_j comp_i`.
    pub fn jac(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        debug_assert_eq!(self.arity, Arity::Vector);
        self.check_point(x)?;
        let d = self.dim;
        let mut pt = [Dual::<f64>::constant(0.0); MAX_DIM];
        for (p, &v) in pt.iter_mut().zip(x) {
            *p = Dual::constant(v);
        }
        for j in 0..d {
            pt[j].d = 1.0;
            for (i, c) in self.comps.iter().enumerate() {
                out[i * d + j] = c.tape.eval(&pt[..d])?.d;
            }
            pt[j].d = 0.0;
        }
        Ok(())
    }

    /// Hessian of a scalar field, row-major d×d.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        debug_assert_eq!(self.arity, Arity::Scalar);
        self.check_point(x)?;
        let d = self.dim;
        let mut pt = [Dual::<Dual<f64>>::constant(Dual::constant(0.0)); MAX_DIM];
        for (p, &v) in pt.iter_mut().zip(x) {
            *p = Dual::constant(Dual::constant(v));
        }
        for i in 0..d {
            pt[i].v.d = 1.0;
            for j in i..d {
                pt[j].d.v = 1.0;
                let r = self.comps[0].tape.eval(&pt[..d])?;
                out[i * d + j] = r.d.d;
                out[j * d + i] = r.d.d;
                pt[j].d.v = 0.0;
            }
            pt[i].v.d = 0.0;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad1(text: &str, x: f64) -> f64 {
        let f = FieldHandle::parse_scalar(text, 1).unwrap();
        let mut g = [0.0];
        f.grad(&[x], &mut g).unwrap();
        g[0]
    }

    #[test]
    fn parses_with_standard_precedence() {
        let e = parse("x0^2 + sin(x1)", 2).unwrap();
        let expect = Ast::add(
            Ast::pow(Ast::var(0), Ast::num(2.0)),
            Ast::call(Func::Sin, Ast::var(1)),
        );
        assert_eq!(*e.ast(), expect);
    }

    #[test]
    fn unary_minus_binds_looser_than_pow() {
        let f = FieldHandle::parse_scalar("-x0^2", 1).unwrap();
        assert_eq!(f.eval_scalar(&[3.0]).unwrap(), -9.0);
        let f = FieldHandle::parse_scalar("-x0", 1).unwrap();
        assert_eq!(f.eval_scalar(&[2.0]).unwrap(), -2.0);
    }

    #[test]
    fn variable_out_of_range_is_rejected() {
        match parse("x3", 2) {
            Err(ExprError::VarOutOfRange { index: 3, dim: 2, .. }) => {}
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_offset() {
        match parse("x0 + @", 1) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse("sin(x0, x0)", 1) {
            Err(ExprError::Arity { func, .. }) => assert_eq!(func, "sin"),
            other => panic!("expected arity error, got {other:?}"),
        }
        match parse("foo(x0)", 1) {
            Err(ExprError::UnknownIdentifier { name, .. }) => assert_eq!(name, "foo"),
            other => panic!("expected unknown identifier, got {other:?}"),
        }
    }

    #[test]
    fn eval_matches_analytic_values() {
        let f = FieldHandle::parse_scalar("cos(x0)", 1).unwrap();
        assert_eq!(f.eval_scalar(&[0.0]).unwrap(), 1.0);
        let f = FieldHandle::parse_scalar("x0*x1", 2).unwrap();
        assert_eq!(f.eval_scalar(&[2.0, 3.0]).unwrap(), 6.0);
        let f = FieldHandle::parse_scalar("exp(-x0)", 1).unwrap();
        assert!((f.eval_scalar(&[1.0]).unwrap() - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn domain_violations_are_reported() {
        let f = FieldHandle::parse_scalar("log(x0)", 1).unwrap();
        match f.eval_scalar(&[-1.0]) {
            Err(ExprError::Domain { expr, .. }) => assert_eq!(expr, "log(x0)"),
            other => panic!("expected domain error, got {other:?}"),
        }
        let f = FieldHandle::parse_scalar("1/x0", 1).unwrap();
        assert!(f.eval_scalar(&[0.0]).is_err());
        let f = FieldHandle::parse_scalar("x0^0.5", 1).unwrap();
        assert!(f.eval_scalar(&[-1.0]).is_err());
        // Integer powers of negative bases are fine.
        let f = FieldHandle::parse_scalar("x0^3", 1).unwrap();
        assert_eq!(f.eval_scalar(&[-2.0]).unwrap(), -8.0);
    }

    #[test]
    fn gradient_matches_closed_forms() {
        assert!((grad1("cos(x0)", std::f64::consts::FRAC_PI_2) + 1.0).abs() < 1e-15);
        assert!((grad1("x0^2", 3.0) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let f = FieldHandle::parse_scalar("sin(x0*x1)", 2).unwrap();
        let x = [0.7, -1.3];
        let mut g = [0.0; 2];
        f.grad(&x, &mut g).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd =
                (f.eval_scalar(&xp).unwrap() - f.eval_scalar(&xm).unwrap()) / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-8, "component {j}: {} vs {}", g[j], fd);
        }
    }

    #[test]
    fn hessian_is_symmetric_and_correct() {
        let f = FieldHandle::parse_scalar("x0^2*x1 + exp(x1)", 2).unwrap();
        let x = [1.2, 0.4];
        let mut h = [0.0; 4];
        f.hessian(&x, &mut h).unwrap();
        assert!((h[0] - 2.0 * x[1]).abs() < 1e-12); // d2/dx0^2 = 2 x1
        assert!((h[1] - 2.0 * x[0]).abs() < 1e-12); // d2/dx0dx1 = 2 x0
        assert_eq!(h[1], h[2]);
        assert!((h[3] - x[1].exp()).abs() < 1e-12); // d2/dx1^2 = exp(x1)
    }

    #[test]
    fn jacobian_of_vector_field() {
        let f = FieldHandle::parse_vector(&["x0*x1", "x1^2"], 2).unwrap();
        let mut j = [0.0; 4];
        f.jac(&[2.0, 5.0], &mut j).unwrap();
        assert_eq!(j, [5.0, 2.0, 0.0, 10.0]);
    }

    #[test]
    fn eval_is_pure() {
        let f = FieldHandle::parse_scalar("tanh(x0) + x0^3/7", 1).unwrap();
        let a = f.eval_scalar(&[0.37]).unwrap();
        let b = f.eval_scalar(&[0.37]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn print_parse_roundtrip_on_samples() {
        for text in [
            "x0^2 + sin(x1)",
            "-x0^2*3 - (x1 - 2)/(x0 + 5)",
            "exp(-(x0 - 1)^2/2)",
            "1 - 2 - 3",
            "2^x0^2",
            "x0 - -x1",
            "abs(x0)*tanh(x1)/sqrt(2)",
        ] {
            let e = parse(text, 2).unwrap();
            let printed = e.print();
            let re = parse(&printed, 2).unwrap();
            assert_eq!(e.ast(), re.ast(), "roundtrip failed on `{text}` -> `{printed}`");
            assert_eq!(re.print(), printed);
        }
    }
}
