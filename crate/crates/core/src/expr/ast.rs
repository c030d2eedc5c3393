//! Expression trees over variables `x0..x{d-1}`.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Tanh,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64),
    Var(usize),
    Neg(Box<Ast>),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Box<Ast>),
}

impl Ast {
    pub fn num(v: f64) -> Ast {
        Ast::Num(v)
    }
    pub fn var(i: usize) -> Ast {
        Ast::Var(i)
    }
    pub fn neg(a: Ast) -> Ast {
        Ast::Neg(Box::new(a))
    }
    pub fn add(a: Ast, b: Ast) -> Ast {
        Ast::Bin(BinOp::Add, Box::new(a), Box::new(b))
    }
    pub fn sub(a: Ast, b: Ast) -> Ast {
        Ast::Bin(BinOp::Sub, Box::new(a), Box::new(b))
    }
    pub fn mul(a: Ast, b: Ast) -> Ast {
        Ast::Bin(BinOp::Mul, Box::new(a), Box::new(b))
    }
    pub fn div(a: Ast, b: Ast) -> Ast {
        Ast::Bin(BinOp::Div, Box::new(a), Box::new(b))
    }
    pub fn pow(a: Ast, b: Ast) -> Ast {
        Ast::Bin(BinOp::Pow, Box::new(a), Box::new(b))
    }
    pub fn call(f: Func, a: Ast) -> Ast {
        Ast::Call(f, Box::new(a))
    }

    /// Largest variable index + 1, or 0 if no variables appear.
    pub fn min_dimension(&self) -> usize {
        match self {
            Ast::Num(_) => 0,
            Ast::Var(i) => i + 1,
            Ast::Neg(a) | Ast::Call(_, a) => a.min_dimension(),
            Ast::Bin(_, a, b) => a.min_dimension().max(b.min_dimension()),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Ast::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Ast::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Ast::Neg(_) => 3,
            Ast::Bin(BinOp::Pow, ..) => 4,
            Ast::Num(v) if *v < 0.0 => 3,
            _ => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Ast, need: u8) -> fmt::Result {
    if child.precedence() < need {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ast::Num(v) => write!(f, "{v}"),
            Ast::Var(i) => write!(f, "x{i}"),
            Ast::Neg(a) => {
                write!(f, "-")?;
                // `^` binds tighter than unary minus, so -(a^b) prints without
                // parens while -(a+b) needs them.
                write_child(f, a, 3)
            }
            Ast::Bin(op, a, b) => {
                let (sym, prec) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Pow => ("^", 4),
                };
                match op {
                    // Left-associative: right child needs strictly higher
                    // precedence to avoid re-association on reparse.
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                        write_child(f, a, prec)?;
                        write!(f, " {sym} ")?;
                        write_child(f, b, prec + 1)?;
                    }
                    // Right-associative, and the exponent may be a unary minus.
                    BinOp::Pow => {
                        write_child(f, a, 5)?;
                        write!(f, "{sym}")?;
                        write_child(f, b, 3)?;
                    }
                }
                Ok(())
            }
            Ast::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
