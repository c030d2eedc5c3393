//! Flat instruction tape compiled from the AST. Evaluation is a small stack
//! machine generic over the scalar type, so the same tape serves values,
//! gradients (duals) and Hessians (nested duals).

use super::ast::{Ast, BinOp, Func};
use super::dual::Scalar;
use super::ExprError;

pub(crate) const MAX_STACK: usize = 64;

#[derive(Debug, Clone)]
pub(crate) enum Instr {
    Const(f64),
    Load(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// General power, computed as exp(b ln a); requires a > 0.
    Pow,
    /// Integer power of a constant exponent; defined for any base.
    PowI(i32),
    Call(Func),
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    instrs: Vec<Instr>,
    /// Printed sub-expression for instructions that can fail, for diagnostics.
    origins: Vec<Option<Box<str>>>,
    max_stack: usize,
}

fn is_small_integer(v: f64) -> Option<i32> {
    if v.fract() == 0.0 && v.abs() <= 64.0 {
        Some(v as i32)
    } else {
        None
    }
}

impl Tape {
    pub fn compile(ast: &Ast) -> Result<Tape, ExprError> {
        let mut tape = Tape {
            instrs: Vec::new(),
            origins: Vec::new(),
            max_stack: 0,
        };
        let depth = tape.emit(ast)?;
        debug_assert_eq!(depth, 1);
        Ok(tape)
    }

    fn push(&mut self, i: Instr, origin: Option<String>) {
        self.instrs.push(i);
        self.origins.push(origin.map(|s| s.into_boxed_str()));
    }

    /// Emits instructions for `ast`; returns the stack depth after execution
    /// relative to the start (always 1 on success).
    fn emit(&mut self, ast: &Ast) -> Result<usize, ExprError> {
        // Track the running maximum stack depth while emitting.
        fn rec(tape: &mut Tape, ast: &Ast, depth: usize) -> Result<(), ExprError> {
            let here = depth + 1;
            if here > MAX_STACK {
                return Err(ExprError::Syntax {
                    offset: 0,
                    message: "expression is nested too deeply".into(),
                });
            }
            tape.max_stack = tape.max_stack.max(here);
            match ast {
                Ast::Num(v) => tape.push(Instr::Const(*v), None),
                Ast::Var(i) => tape.push(Instr::Load(*i), None),
                Ast::Neg(a) => {
                    rec(tape, a, depth)?;
                    tape.push(Instr::Neg, None);
                }
                Ast::Call(f, a) => {
                    rec(tape, a, depth)?;
                    let origin = matches!(f, Func::Log | Func::Sqrt | Func::Tan)
                        .then(|| ast.to_string());
                    tape.push(Instr::Call(*f), origin);
                }
                Ast::Bin(BinOp::Pow, a, b) => {
                    if let Ast::Num(e) = **b {
                        if let Some(n) = is_small_integer(e) {
                            rec(tape, a, depth)?;
                            tape.push(Instr::PowI(n), Some(ast.to_string()));
                            return Ok(());
                        }
                    }
                    rec(tape, a, depth)?;
                    rec(tape, b, depth + 1)?;
                    tape.push(Instr::Pow, Some(ast.to_string()));
                }
                Ast::Bin(op, a, b) => {
                    rec(tape, a, depth)?;
                    rec(tape, b, depth + 1)?;
                    let (instr, origin) = match op {
                        BinOp::Add => (Instr::Add, None),
                        BinOp::Sub => (Instr::Sub, None),
                        BinOp::Mul => (Instr::Mul, None),
                        BinOp::Div => (Instr::Div, Some(ast.to_string())),
                        BinOp::Pow => unreachable!(),
                    };
                    tape.push(instr, origin);
                }
            }
            Ok(())
        }
        rec(self, ast, 0)?;
        Ok(1)
    }

    fn origin(&self, idx: usize) -> String {
        self.origins[idx]
            .as_deref()
            .unwrap_or("<expression>")
            .to_owned()
    }

    #[inline]
    pub fn eval<T: Scalar>(&self, x: &[T]) -> Result<T, ExprError> {
        let mut stack = [T::from_f64(0.0); MAX_STACK];
        let mut sp = 0usize;
        for (idx, instr) in self.instrs.iter().enumerate() {
            match instr {
                Instr::Const(v) => {
                    stack[sp] = T::from_f64(*v);
                    sp += 1;
                }
                Instr::Load(i) => {
                    stack[sp] = x[*i];
                    sp += 1;
                }
                Instr::Add => {
                    sp -= 1;
                    stack[sp - 1] = stack[sp - 1] + stack[sp];
                }
                Instr::Sub => {
                    sp -= 1;
                    stack[sp - 1] = stack[sp - 1] - stack[sp];
                }
                Instr::Mul => {
                    sp -= 1;
                    stack[sp - 1] = stack[sp - 1] * stack[sp];
                }
                Instr::Div => {
                    sp -= 1;
                    if stack[sp].primal() == 0.0 {
                        return Err(ExprError::Domain {
                            expr: self.origin(idx),
                            message: "division by zero".into(),
                        });
                    }
                    stack[sp - 1] = stack[sp - 1] / stack[sp];
                }
                Instr::Neg => {
                    stack[sp - 1] = -stack[sp - 1];
                }
                Instr::Pow => {
                    sp -= 1;
                    let base = stack[sp - 1];
                    if base.primal() <= 0.0 {
                        return Err(ExprError::Domain {
                            expr: self.origin(idx),
                            message: format!(
                                "non-integer power requires a positive base (base = {})",
                                base.primal()
                            ),
                        });
                    }
                    stack[sp - 1] = (stack[sp] * base.ln()).exp();
                }
                Instr::PowI(n) => {
                    let base = stack[sp - 1];
                    if *n < 0 && base.primal() == 0.0 {
                        return Err(ExprError::Domain {
                            expr: self.origin(idx),
                            message: "zero base with negative exponent".into(),
                        });
                    }
                    stack[sp - 1] = base.powi(*n);
                }
                Instr::Call(f) => {
                    let a = stack[sp - 1];
                    stack[sp - 1] = match f {
                        Func::Sin => a.sin(),
                        Func::Cos => a.cos(),
                        Func::Tan => a.tan(),
                        Func::Exp => a.exp(),
                        Func::Tanh => a.tanh(),
                        Func::Abs => a.abs(),
                        Func::Log => {
                            if a.primal() <= 0.0 {
                                return Err(ExprError::Domain {
                                    expr: self.origin(idx),
                                    message: format!(
                                        "log of non-positive value ({})",
                                        a.primal()
                                    ),
                                });
                            }
                            a.ln()
                        }
                        Func::Sqrt => {
                            if a.primal() < 0.0 {
                                return Err(ExprError::Domain {
                                    expr: self.origin(idx),
                                    message: format!(
                                        "sqrt of negative value ({})",
                                        a.primal()
                                    ),
                                });
                            }
                            a.sqrt()
                        }
                    };
                }
            }
        }
        debug_assert_eq!(sp, 1);
        Ok(stack[0])
    }
}
