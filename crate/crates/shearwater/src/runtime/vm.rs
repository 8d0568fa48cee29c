//! Register bytecode for pointwise and stencil kernels.
//!
//! Expression trees compile bottom-up into linear ops over chunks of up to
//! [`LINE`] contiguous grid points. Every op maps one-to-one onto the
//! expression the C emitter prints, with the same association order, so both
//! backends perform the identical sequence of roundings: sums and products
//! fold left, stencils accumulate in ascending offset order, powers unroll
//! to repeated multiplication (with a square root for half-integer
//! exponents and one final reciprocal for negative ones), and a leading
//! factor of -1 becomes a negation.

use crate::discretize::{DiscretizeError, IterationRange, Kernel, LoweredStencil};
use crate::expr::{Expr, Head};
use crate::grid::Grid;
use crate::pmath;
use indexmap::IndexMap;

/// Chunk width: number of grid points processed per op dispatch.
pub const LINE: usize = 64;

type Reg = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
}

impl Func {
    fn eval(self, x: f64) -> f64 {
        match self {
            Func::Sin => pmath::p_sin(x),
            Func::Cos => pmath::p_cos(x),
            Func::Exp => pmath::p_exp(x),
            Func::Tanh => pmath::p_tanh(x),
            Func::Sqrt => pmath::p_sqrt(x),
        }
    }
}

/// Where a load resolves: an array the kernel only reads, or one of its own
/// write targets (offset zero only, so chunk execution matches per-point
/// execution).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SrcArr {
    Read(u16),
    Target(u16),
}

#[derive(Clone, Debug)]
pub enum Op {
    Const { dst: Reg, value: f64 },
    /// `dst[l] = array[flat + l + offset]` (offset pre-multiplied by stride).
    Read { dst: Reg, src: SrcArr, offset: i64 },
    /// Interior grid index along `dim` as f64.
    Idx { dst: Reg, dim: usize },
    Add { dst: Reg, a: Reg, b: Reg },
    Mul { dst: Reg, a: Reg, b: Reg },
    Neg { dst: Reg, a: Reg },
    Recip { dst: Reg, a: Reg },
    Call { dst: Reg, a: Reg, f: Func },
    /// Fused central difference: weighted sum over constant offsets of one
    /// read array, accumulated in ascending offset order.
    Stencil {
        dst: Reg,
        array: u16,
        terms: Box<[(i64, f64)]>,
    },
    Store { src: Reg, target: u16 },
}

/// A kernel lowered to bytecode plus its array binding table: `reads` and
/// `targets` are FieldSet slots resolved at compile time.
#[derive(Clone, Debug)]
pub struct CompiledKernel {
    pub name: String,
    pub ops: Vec<Op>,
    pub reg_count: usize,
    pub reads: Vec<usize>,
    pub targets: Vec<usize>,
    pub range: IterationRange,
}

/// A scalar expression lowered for interior reductions: same op set, the
/// value is left in `result` instead of stored.
#[derive(Clone, Debug)]
pub struct CompiledReduction {
    pub ops: Vec<Op>,
    pub result: Reg,
    pub reg_count: usize,
    pub reads: Vec<usize>,
}

/// Array and constant environment a kernel compiles against.
pub struct CompileCtx<'a> {
    pub grid: &'a Grid,
    /// Array name -> FieldSet slot, in allocation order.
    pub slots: &'a IndexMap<String, usize>,
    pub constants: &'a IndexMap<String, f64>,
    pub stencils: &'a IndexMap<(usize, usize), LoweredStencil>,
}

/// `idx0` / `idx1` / `idx2` as read in initial-condition expressions.
fn idx_axis(name: &str, ndim: usize) -> Option<usize> {
    let rest = name.strip_prefix("idx")?;
    let d: usize = rest.parse().ok()?;
    (d < ndim).then_some(d)
}

struct Compiler<'a> {
    ctx: &'a CompileCtx<'a>,
    kernel: &'a str,
    target_names: Vec<&'a str>,
    reads: Vec<usize>,
    ops: Vec<Op>,
    free: Vec<Reg>,
    reg_count: u16,
}

impl<'a> Compiler<'a> {
    fn new(ctx: &'a CompileCtx<'a>, kernel: &'a str, target_names: Vec<&'a str>) -> Self {
        Compiler {
            ctx,
            kernel,
            target_names,
            reads: Vec::new(),
            ops: Vec::new(),
            free: Vec::new(),
            reg_count: 0,
        }
    }

    fn alloc(&mut self) -> Reg {
        if let Some(r) = self.free.pop() {
            r
        } else {
            self.reg_count += 1;
            self.reg_count - 1
        }
    }

    fn release(&mut self, r: Reg) {
        self.free.push(r);
    }

    fn err(&self, msg: String) -> DiscretizeError {
        DiscretizeError::Value(format!("kernel {}: {msg}", self.kernel))
    }

    fn slot_of(&self, name: &str) -> Result<usize, DiscretizeError> {
        self.ctx
            .slots
            .get(name)
            .copied()
            .ok_or_else(|| self.err(format!("no array named {name}")))
    }

    fn read_index(&mut self, slot: usize) -> u16 {
        match self.reads.iter().position(|&s| s == slot) {
            Some(i) => i as u16,
            None => {
                self.reads.push(slot);
                (self.reads.len() - 1) as u16
            }
        }
    }

    fn constant(&self, name: &str) -> Result<f64, DiscretizeError> {
        self.ctx
            .constants
            .get(name)
            .copied()
            .ok_or_else(|| self.err(format!("constant {name} has no value")))
    }

    fn emit_const(&mut self, value: f64) -> Reg {
        let dst = self.alloc();
        self.ops.push(Op::Const { dst, value });
        dst
    }

    /// Coordinate x_d = (index along d) * delta_d, matching the C emitter's
    /// `(double)i{d} * delta{d}`.
    fn emit_coordinate(&mut self, dim: usize) -> Result<Reg, DiscretizeError> {
        let idx = self.alloc();
        self.ops.push(Op::Idx { dst: idx, dim });
        let delta = self.emit_const(self.constant(&format!("delta{dim}"))?);
        let dst = self.alloc();
        self.ops.push(Op::Mul {
            dst,
            a: idx,
            b: delta,
        });
        self.release(idx);
        self.release(delta);
        Ok(dst)
    }

    fn emit_field_read(&mut self, f: &crate::expr::FieldRef) -> Result<Reg, DiscretizeError> {
        let name = f.name.as_str();
        if f.offsets.is_empty() {
            if let Some(d) = idx_axis(name, self.ctx.grid.ndim) {
                let dst = self.alloc();
                self.ops.push(Op::Idx { dst, dim: d });
                return Ok(dst);
            }
            // Grid symbols that are constants by the time kernels run.
            if !self.ctx.slots.contains_key(name) {
                if let Some(&value) = self.ctx.constants.get(name) {
                    return Ok(self.emit_const(value));
                }
            }
        }
        let offset: i64 = f
            .offsets
            .iter()
            .zip(&self.ctx.grid.strides)
            .map(|(o, s)| o * *s as i64)
            .sum();
        let src = match self.target_names.iter().position(|&t| t == name) {
            Some(t) => {
                if offset != 0 {
                    return Err(self.err(format!(
                        "offset read of {name}, which this kernel also writes"
                    )));
                }
                SrcArr::Target(t as u16)
            }
            None => {
                let slot = self.slot_of(name)?;
                SrcArr::Read(self.read_index(slot))
            }
        };
        let dst = self.alloc();
        self.ops.push(Op::Read { dst, src, offset });
        Ok(dst)
    }

    fn compile(&mut self, expr: &Expr) -> Result<Reg, DiscretizeError> {
        match expr {
            Expr::Rational(r) => Ok(self.emit_const(r.to_f64())),
            Expr::Float(v) => Ok(self.emit_const(v.0)),
            Expr::Term(t) => {
                if t.is_time {
                    return Err(self.err("the time symbol cannot be evaluated".into()));
                }
                if t.is_coordinate {
                    let d = t
                        .coordinate_axis()
                        .ok_or_else(|| self.err(format!("unresolved coordinate {}", t.base)))?;
                    return self.emit_coordinate(d);
                }
                let name = t.concrete_name().unwrap_or_else(|| t.base.clone());
                if t.is_constant {
                    let v = self.constant(&name)?;
                    return Ok(self.emit_const(v));
                }
                if let Some(d) = idx_axis(&name, self.ctx.grid.ndim) {
                    let dst = self.alloc();
                    self.ops.push(Op::Idx { dst, dim: d });
                    return Ok(dst);
                }
                Err(self.err(format!("unresolved symbol {name}")))
            }
            Expr::Field(f) => self.emit_field_read(f),
            Expr::Sum(terms) => {
                let mut acc = self.compile(&terms[0])?;
                for t in &terms[1..] {
                    let rhs = self.compile(t)?;
                    let dst = self.alloc();
                    self.ops.push(Op::Add {
                        dst,
                        a: acc,
                        b: rhs,
                    });
                    self.release(acc);
                    self.release(rhs);
                    acc = dst;
                }
                Ok(acc)
            }
            Expr::Product(factors) => {
                // A leading -1 is a negation of the rest, not a multiply.
                let minus_one = matches!(&factors[0], Expr::Float(f) if f.0 == -1.0)
                    || matches!(&factors[0], Expr::Rational(r) if *r == crate::expr::Rational::integer(-1));
                if factors.len() > 1 && minus_one {
                    let rest = if factors.len() == 2 {
                        self.compile(&factors[1])?
                    } else {
                        self.compile_product(&factors[1..])?
                    };
                    let dst = self.alloc();
                    self.ops.push(Op::Neg { dst, a: rest });
                    self.release(rest);
                    return Ok(dst);
                }
                self.compile_product(factors)
            }
            Expr::Power(base, exp) => self.compile_power(base, exp),
            Expr::Apply(h, args) => {
                let f = match h {
                    Head::Sin => Func::Sin,
                    Head::Cos => Func::Cos,
                    Head::Exp => Func::Exp,
                    Head::Tanh => Func::Tanh,
                    Head::Sqrt => Func::Sqrt,
                    other => {
                        return Err(
                            self.err(format!("operator {} cannot be lowered", other.name()))
                        )
                    }
                };
                let a = self.compile(&args[0])?;
                let dst = self.alloc();
                self.ops.push(Op::Call { dst, a, f });
                self.release(a);
                Ok(dst)
            }
            Expr::Derivative(leaf) => {
                let source = match &leaf.operand {
                    Expr::Field(f) => f.name.clone(),
                    other => {
                        return Err(self.err(format!(
                            "stencil operand must be an array, got {other}"
                        )))
                    }
                };
                if self.target_names.contains(&source.as_str()) {
                    return Err(self.err(format!(
                        "stencil reads {source}, which this kernel also writes"
                    )));
                }
                let key = (leaf.dirs[0], leaf.dirs.len());
                let lowered = self.ctx.stencils.get(&key).ok_or_else(|| {
                    self.err(format!(
                        "no stencil instance for direction {} degree {}",
                        key.0, key.1
                    ))
                })?;
                let stride = self.ctx.grid.strides[lowered.direction] as i64;
                let mut terms = Vec::with_capacity(lowered.terms.len());
                for (off, cname) in &lowered.terms {
                    terms.push((off * stride, self.constant(cname)?));
                }
                let slot = self.slot_of(&source)?;
                let array = self.read_index(slot);
                let dst = self.alloc();
                self.ops.push(Op::Stencil {
                    dst,
                    array,
                    terms: terms.into_boxed_slice(),
                });
                Ok(dst)
            }
        }
    }

    fn compile_product(&mut self, factors: &[Expr]) -> Result<Reg, DiscretizeError> {
        let mut acc = self.compile(&factors[0])?;
        for f in &factors[1..] {
            let rhs = self.compile(f)?;
            let dst = self.alloc();
            self.ops.push(Op::Mul {
                dst,
                a: acc,
                b: rhs,
            });
            self.release(acc);
            self.release(rhs);
            acc = dst;
        }
        Ok(acc)
    }

    /// Integer and half-integer powers as the fixed multiply sequence shared
    /// with constant folding and the C emitter.
    fn compile_power(&mut self, base: &Expr, exp: &Expr) -> Result<Reg, DiscretizeError> {
        let r = match exp {
            Expr::Rational(r) => r,
            other => return Err(self.err(format!("exponent {other} is not a literal"))),
        };
        let (num, half) = if r.is_integer() {
            (r.as_integer().unwrap_or(i64::MAX), false)
        } else if r.denominator() == 2.into() {
            let d = r * &crate::expr::Rational::integer(2);
            (d.as_integer().unwrap_or(i64::MAX), true)
        } else {
            return Err(self.err(format!("exponent {r} is not an integer or half-integer")));
        };
        if num.abs() > 16 {
            return Err(self.err(format!("exponent {r} is too large")));
        }
        let b = self.compile(base)?;
        let b = if half {
            let dst = self.alloc();
            self.ops.push(Op::Call {
                dst,
                a: b,
                f: Func::Sqrt,
            });
            self.release(b);
            dst
        } else {
            b
        };
        if num == 0 {
            self.release(b);
            return Ok(self.emit_const(1.0));
        }
        let mut acc = b;
        for _ in 1..num.unsigned_abs() {
            let dst = self.alloc();
            self.ops.push(Op::Mul { dst, a: acc, b });
            if acc != b {
                self.release(acc);
            }
            acc = dst;
        }
        if acc != b {
            self.release(b);
        }
        if num < 0 {
            let dst = self.alloc();
            self.ops.push(Op::Recip { dst, a: acc });
            self.release(acc);
            acc = dst;
        }
        Ok(acc)
    }
}

/// Lower a planned kernel against concrete arrays, constants, and stencil
/// instances. Nonzero-offset reads of the kernel's own targets are rejected;
/// offset-zero self reads resolve to the target buffer so statements see
/// each other's writes at the same point, exactly as the per-point C loop
/// does.
pub fn compile_kernel(
    kernel: &Kernel,
    ctx: &CompileCtx,
) -> Result<CompiledKernel, DiscretizeError> {
    let target_names: Vec<&str> = kernel
        .statements
        .iter()
        .map(|s| s.target.as_str())
        .fold(Vec::new(), |mut v, t| {
            if !v.contains(&t) {
                v.push(t);
            }
            v
        });
    let mut c = Compiler::new(ctx, &kernel.name, target_names.clone());
    for stmt in &kernel.statements {
        let src = c.compile(&stmt.expr)?;
        let target = target_names
            .iter()
            .position(|&t| t == stmt.target)
            .expect("statement target collected above") as u16;
        c.ops.push(Op::Store { src, target });
        c.release(src);
    }
    let mut targets = Vec::with_capacity(target_names.len());
    for name in &target_names {
        targets.push(
            ctx.slots
                .get(*name)
                .copied()
                .ok_or_else(|| c.err(format!("no array named {name}")))?,
        );
    }
    Ok(CompiledKernel {
        name: kernel.name.clone(),
        ops: c.ops,
        reg_count: c.reg_count as usize,
        reads: c.reads,
        targets,
        range: kernel.range.clone(),
    })
}

/// Lower a pointwise scalar expression for use in interior reductions.
pub fn compile_reduction(
    expr: &Expr,
    ctx: &CompileCtx,
) -> Result<CompiledReduction, DiscretizeError> {
    let mut c = Compiler::new(ctx, "reduction", Vec::new());
    let result = c.compile(expr)?;
    Ok(CompiledReduction {
        ops: c.ops,
        result,
        reg_count: c.reg_count as usize,
        reads: c.reads,
    })
}

/// Register file: `reg_count` lanes of [`LINE`] values each.
pub struct RegFile(Vec<f64>);

impl RegFile {
    pub fn new(reg_count: usize) -> RegFile {
        RegFile(vec![0.0; reg_count.max(1) * LINE])
    }

    #[inline]
    pub(crate) fn lane(&self, r: Reg, len: usize) -> &[f64] {
        &self.0[r as usize * LINE..r as usize * LINE + len]
    }

    #[inline]
    fn lane_mut(&mut self, r: Reg, len: usize) -> &mut [f64] {
        &mut self.0[r as usize * LINE..r as usize * LINE + len]
    }
}

/// One chunk of contiguous points: absolute padded flat index of the first
/// point, the interior coordinates of that point, and the chunk length.
pub struct Chunk<'a> {
    pub flat: usize,
    pub coords: &'a [i64],
    pub len: usize,
}

/// Execute a compiled op sequence over one chunk. `reads` are whole padded
/// arrays indexed absolutely; `targets` are sub-slices starting at padded
/// flat index `target_base`.
#[allow(clippy::too_many_arguments)]
pub fn exec_chunk(
    ops: &[Op],
    regs: &mut RegFile,
    reads: &[&[f64]],
    targets: &mut [&mut [f64]],
    target_base: usize,
    chunk: &Chunk,
    inner_dim: usize,
) {
    let len = chunk.len;
    let mut out = [0.0f64; LINE];
    for op in ops {
        match op {
            Op::Const { dst, value } => regs.lane_mut(*dst, len).fill(*value),
            Op::Read { dst, src, offset } => {
                let base = (chunk.flat as i64 + offset) as usize;
                match src {
                    SrcArr::Read(i) => {
                        let s = &reads[*i as usize][base..base + len];
                        regs.lane_mut(*dst, len).copy_from_slice(s);
                    }
                    SrcArr::Target(t) => {
                        let s = &targets[*t as usize][base - target_base..base - target_base + len];
                        regs.lane_mut(*dst, len).copy_from_slice(s);
                    }
                }
            }
            Op::Idx { dst, dim } => {
                let d = regs.lane_mut(*dst, len);
                if *dim == inner_dim {
                    let start = chunk.coords[inner_dim];
                    for (l, v) in d.iter_mut().enumerate() {
                        *v = (start + l as i64) as f64;
                    }
                } else {
                    d.fill(chunk.coords[*dim] as f64);
                }
            }
            Op::Add { dst, a, b } => {
                for ((o, &x), &y) in out[..len]
                    .iter_mut()
                    .zip(regs.lane(*a, len))
                    .zip(regs.lane(*b, len))
                {
                    *o = x + y;
                }
                regs.lane_mut(*dst, len).copy_from_slice(&out[..len]);
            }
            Op::Mul { dst, a, b } => {
                for ((o, &x), &y) in out[..len]
                    .iter_mut()
                    .zip(regs.lane(*a, len))
                    .zip(regs.lane(*b, len))
                {
                    *o = x * y;
                }
                regs.lane_mut(*dst, len).copy_from_slice(&out[..len]);
            }
            Op::Neg { dst, a } => {
                for (o, &x) in out[..len].iter_mut().zip(regs.lane(*a, len)) {
                    *o = -x;
                }
                regs.lane_mut(*dst, len).copy_from_slice(&out[..len]);
            }
            Op::Recip { dst, a } => {
                for (o, &x) in out[..len].iter_mut().zip(regs.lane(*a, len)) {
                    *o = 1.0 / x;
                }
                regs.lane_mut(*dst, len).copy_from_slice(&out[..len]);
            }
            Op::Call { dst, a, f } => {
                for (o, &x) in out[..len].iter_mut().zip(regs.lane(*a, len)) {
                    *o = f.eval(x);
                }
                regs.lane_mut(*dst, len).copy_from_slice(&out[..len]);
            }
            Op::Stencil { dst, array, terms } => {
                let arr = reads[*array as usize];
                let (off0, w0) = terms[0];
                let base0 = (chunk.flat as i64 + off0) as usize;
                let s0 = &arr[base0..base0 + len];
                for (o, &v) in out[..len].iter_mut().zip(s0) {
                    *o = w0 * v;
                }
                for &(off, w) in &terms[1..] {
                    let base = (chunk.flat as i64 + off) as usize;
                    let s = &arr[base..base + len];
                    for (o, &v) in out[..len].iter_mut().zip(s) {
                        *o += w * v;
                    }
                }
                regs.lane_mut(*dst, len).copy_from_slice(&out[..len]);
            }
            Op::Store { src, target } => {
                let base = chunk.flat - target_base;
                targets[*target as usize][base..base + len]
                    .copy_from_slice(regs.lane(*src, len));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::einstein::expand_system;
    use crate::expr::parse_equation;
    use std::collections::HashSet;

    #[test]
    fn register_reuse_keeps_the_file_small() {
        // (a+b)*(c+d) + (e+f)*(g+h): naive allocation needs 8+ registers,
        // the free list should stay under 4.
        let consts: HashSet<String> = HashSet::new();
        let eq = parse_equation(
            "Eq(z, (a+b)*(c+d) + (e+f)*(g+h))",
            &consts,
        )
        .unwrap();
        let expanded = expand_system(&[eq], 1).unwrap();
        let grid = Grid::new(&[8], &[1.0], &[0]).unwrap();
        let names = ["z", "a", "b", "c", "d", "e", "f", "g", "h"];
        let slots: IndexMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect();
        let constants = IndexMap::new();
        let stencils = IndexMap::new();
        let ctx = CompileCtx {
            grid: &grid,
            slots: &slots,
            constants: &constants,
            stencils: &stencils,
        };
        let kernel = crate::discretize::Kernel {
            name: "k".into(),
            statements: vec![crate::discretize::Assign {
                target: "z".into(),
                expr: expanded[0].rhs.clone(),
            }],
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: IterationRange::interior(&[8]),
            footprints: Default::default(),
        };
        let compiled = compile_kernel(&kernel, &ctx).unwrap();
        // 17 expression nodes; the free list keeps the register file near
        // the expression depth instead.
        assert!(compiled.reg_count <= 5, "got {}", compiled.reg_count);
        assert_eq!(compiled.reads.len(), 8);
        assert_eq!(compiled.targets, vec![0]);
    }

    #[test]
    fn nonzero_offset_self_reads_are_rejected_by_stencils() {
        let consts: HashSet<String> = HashSet::new();
        let eq = parse_equation("Eq(Der(q,t), Der(q, x0))", &consts).unwrap();
        let expanded = expand_system(&[eq], 1).unwrap();
        let grid = Grid::new(&[8], &[1.0], &[1]).unwrap();
        let slots: IndexMap<String, usize> = [("q".to_string(), 0usize)].into_iter().collect();
        let constants: IndexMap<String, f64> =
            [("rc0".to_string(), 0.5)].into_iter().collect();
        let stencils: IndexMap<(usize, usize), LoweredStencil> = [(
            (0usize, 1usize),
            LoweredStencil {
                direction: 0,
                degree: 1,
                terms: vec![(-1, "rc0".into()), (1, "rc0".into())],
            },
        )]
        .into_iter()
        .collect();
        let ctx = CompileCtx {
            grid: &grid,
            slots: &slots,
            constants: &constants,
            stencils: &stencils,
        };
        // A kernel that writes q while stencil-reading q must be refused.
        let kernel = crate::discretize::Kernel {
            name: "bad".into(),
            statements: vec![crate::discretize::Assign {
                target: "q".into(),
                expr: expanded[0].rhs.clone(),
            }],
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: IterationRange::interior(&[8]),
            footprints: Default::default(),
        };
        let err = compile_kernel(&kernel, &ctx).unwrap_err();
        assert!(err.to_string().contains("also writes"));
    }

    #[test]
    fn power_lowering_matches_the_shared_multiply_sequence() {
        use crate::expr::Rational;
        for (exp, base, want) in [
            (Rational::integer(3), 1.7, 1.7 * 1.7 * 1.7),
            (Rational::integer(-2), 1.7, 1.0 / (1.7 * 1.7)),
            (Rational::new(1, 2), 1.7, 1.7f64.sqrt()),
            (Rational::new(-1, 2), 1.7, 1.0 / 1.7f64.sqrt()),
            (Rational::new(3, 2), 1.7, {
                let s = 1.7f64.sqrt();
                s * s * s
            }),
        ] {
            let v = crate::discretize::pow_value(base, &exp).unwrap();
            assert_eq!(v.to_bits(), want.to_bits(), "exponent {exp}");
        }
    }
}
