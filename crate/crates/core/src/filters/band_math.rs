//! Pointwise arithmetic over bands.
//!
//! Expressions use `b0`, `b1`, ... for the bands of all inputs concatenated
//! in input order, numeric literals, `+ - * /`, unary minus, parentheses and
//! the functions `abs`, `sqrt`, `min`, `max`.

use super::{render_rows, same_geometry};
use crate::error::{Error, Result};
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleType, SampleView};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Const(f64),
    Band(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Sqrt,
    Min,
    Max,
}

/// A compiled expression, evaluated on a small stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Expression {
    source: String,
    program: Vec<Op>,
    max_band: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Token {
    Num(f64),
    Band(usize),
    Ident(&'static str),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let err = |msg: String| Error::Config(format!("expression '{text}': {msg}"));
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => (tokens.push(Token::Plus), i += 1).1,
            '-' => (tokens.push(Token::Minus), i += 1).1,
            '*' => (tokens.push(Token::Star), i += 1).1,
            '/' => (tokens.push(Token::Slash), i += 1).1,
            '(' => (tokens.push(Token::Open), i += 1).1,
            ')' => (tokens.push(Token::Close), i += 1).1,
            ',' => (tokens.push(Token::Comma), i += 1).1,
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let lit = &text[start..i];
                tokens.push(Token::Num(
                    lit.parse().map_err(|_| err(format!("bad number '{lit}'")))?,
                ));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let word = &text[start..i];
                let token = match word {
                    "abs" => Token::Ident("abs"),
                    "sqrt" => Token::Ident("sqrt"),
                    "min" => Token::Ident("min"),
                    "max" => Token::Ident("max"),
                    w if w.starts_with('b') && w.len() > 1 && w[1..].bytes().all(|d| d.is_ascii_digit()) => {
                        Token::Band(w[1..].parse().map_err(|_| err(format!("bad band '{w}'")))?)
                    }
                    w => return Err(err(format!("unknown name '{w}'"))),
                };
                tokens.push(token);
            }
            c => return Err(err(format!("unexpected character '{c}'"))),
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    text: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    out: Vec<Op>,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Config(format!("expression '{}': {msg}", self.text))
    }

    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn expect(&mut self, t: Token) -> Result<()> {
        if self.peek() == Some(t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected {t:?}")))
        }
    }

    fn expr(&mut self) -> Result<()> {
        self.term()?;
        while let Some(t @ (Token::Plus | Token::Minus)) = self.peek() {
            self.pos += 1;
            self.term()?;
            self.out.push(if t == Token::Plus { Op::Add } else { Op::Sub });
        }
        Ok(())
    }

    fn term(&mut self) -> Result<()> {
        self.unary()?;
        while let Some(t @ (Token::Star | Token::Slash)) = self.peek() {
            self.pos += 1;
            self.unary()?;
            self.out.push(if t == Token::Star { Op::Mul } else { Op::Div });
        }
        Ok(())
    }

    fn unary(&mut self) -> Result<()> {
        if self.peek() == Some(Token::Minus) {
            self.pos += 1;
            self.unary()?;
            self.out.push(Op::Neg);
            return Ok(());
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<()> {
        match self.peek() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                self.out.push(Op::Const(v));
            }
            Some(Token::Band(b)) => {
                self.pos += 1;
                self.out.push(Op::Band(b));
            }
            Some(Token::Open) => {
                self.pos += 1;
                self.expr()?;
                self.expect(Token::Close)?;
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                self.expect(Token::Open)?;
                self.expr()?;
                let op = match name {
                    "abs" => Op::Abs,
                    "sqrt" => Op::Sqrt,
                    _ => {
                        self.expect(Token::Comma)?;
                        self.expr()?;
                        if name == "min" {
                            Op::Min
                        } else {
                            Op::Max
                        }
                    }
                };
                self.expect(Token::Close)?;
                self.out.push(op);
            }
            _ => return Err(self.err("expected a number, band or '('")),
        }
        Ok(())
    }
}

impl Expression {
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser {
            text,
            tokens: tokenize(text)?,
            pos: 0,
            out: Vec::new(),
        };
        p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(p.err("trailing input"));
        }
        let max_band = p
            .out
            .iter()
            .filter_map(|op| match op {
                Op::Band(b) => Some(*b),
                _ => None,
            })
            .max();
        Ok(Expression {
            source: text.to_string(),
            program: p.out,
            max_band,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Highest band index referenced, if any.
    pub fn max_band(&self) -> Option<usize> {
        self.max_band
    }

    /// Evaluates with `bands[i]` bound to `bi`.
    pub fn eval(&self, bands: &[f64]) -> f64 {
        let mut stack = [0.0f64; 32];
        let mut sp = 0;
        self.eval_with(bands, &mut stack, &mut sp)
    }

    fn eval_with(&self, bands: &[f64], stack: &mut [f64; 32], sp: &mut usize) -> f64 {
        let mut heap;
        let stack: &mut [f64] = if self.program.len() > stack.len() {
            heap = vec![0.0; self.program.len()];
            &mut heap
        } else {
            stack
        };
        *sp = 0;
        for op in &self.program {
            match *op {
                Op::Const(v) => {
                    stack[*sp] = v;
                    *sp += 1;
                }
                Op::Band(b) => {
                    stack[*sp] = bands[b];
                    *sp += 1;
                }
                Op::Neg => stack[*sp - 1] = -stack[*sp - 1],
                Op::Abs => stack[*sp - 1] = stack[*sp - 1].abs(),
                Op::Sqrt => stack[*sp - 1] = stack[*sp - 1].sqrt(),
                binary => {
                    *sp -= 1;
                    let (a, b) = (stack[*sp - 1], stack[*sp]);
                    stack[*sp - 1] = match binary {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => a / b,
                        Op::Min => a.min(b),
                        Op::Max => a.max(b),
                        _ => unreachable!(),
                    };
                }
            }
        }
        stack[0]
    }
}

/// One output band per expression.
#[derive(Clone, Debug)]
pub struct BandMath {
    expressions: Vec<Expression>,
    output_type: SampleType,
}

impl BandMath {
    pub fn new(expressions: Vec<Expression>, output_type: SampleType) -> Result<Self> {
        if expressions.is_empty() {
            return Err(Error::Config("band_math needs at least one expression".into()));
        }
        Ok(BandMath {
            expressions,
            output_type,
        })
    }

    pub fn parse(expressions: &[&str], output_type: SampleType) -> Result<Self> {
        let exprs = expressions
            .iter()
            .map(|e| Expression::parse(e))
            .collect::<Result<_>>()?;
        Self::new(exprs, output_type)
    }
}

impl ProcessObject for BandMath {
    fn kind(&self) -> &'static str {
        "band_math"
    }

    fn input_count(&self) -> InputCount {
        InputCount::AtLeast(1)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        for other in &inputs[1..] {
            same_geometry("band_math", &inputs[0], other)?;
        }
        let total: usize = inputs.iter().map(|i| i.bands).sum();
        for e in &self.expressions {
            if let Some(b) = e.max_band() {
                if b >= total {
                    return Err(Error::Config(format!(
                        "expression '{}' references b{b} but the inputs have {total} bands",
                        e.source()
                    )));
                }
            }
        }
        let mut info = inputs[0];
        info.bands = self.expressions.len();
        info.sample_type = self.output_type;
        Ok(info)
    }

    fn generate(
        &self,
        region: Region,
        info: &ImageInfo,
        inputs: &[&PixelBuffer],
        exec: &ExecContext,
    ) -> Result<PixelBuffer> {
        let views: Vec<SampleView> = inputs.iter().map(|b| SampleView::new(b)).collect();
        let total: usize = views.iter().map(|v| v.bands()).sum();
        let out_bands = info.bands;
        render_rows(region, out_bands, info.sample_type, exec.parallelism, |y, row| {
            let mut pixel = vec![0.0; total];
            let mut stack = [0.0f64; 32];
            let mut sp = 0;
            for (i, out) in row.chunks_exact_mut(out_bands).enumerate() {
                let x = region.x() + i;
                let mut k = 0;
                for v in &views {
                    let p = v.pixel(x, y);
                    pixel[k..k + p.len()].copy_from_slice(p);
                    k += p.len();
                }
                for (o, e) in out.iter_mut().zip(&self.expressions) {
                    *o = e.eval_with(&pixel, &mut stack, &mut sp);
                }
            }
        })
    }
}
