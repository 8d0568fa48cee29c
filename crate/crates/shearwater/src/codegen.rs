//! Portable C99 emission.
//!
//! The emitter prints the same bytecode the in-process runtime executes:
//! each op becomes one C statement on `double` locals, so both backends
//! perform the identical sequence of IEEE roundings — left-folded sums and
//! products, ascending-offset stencil accumulation, unrolled powers, `-x`
//! for negation, and `1.0 / x` feeding a multiply for reciprocals. The
//! elementary functions are the portable routines from [`crate::pmath`],
//! transliterated token for token. Bitwise agreement holds when the C is
//! compiled without contraction or value-unsafe optimisation:
//!
//! ```text
//! cc -O2 -ffp-contract=off -fno-fast-math driver.c -lm
//! ```
//!
//! Two files are produced. `kernels.h` holds the problem: grid macros,
//! named constants, the arrays, the elementary functions, one function per
//! kernel, the boundary passes, and `initialize`/`step_once`. `driver.c` is
//! a thin harness that runs `NITER` steps and dumps every prognostic's
//! interior to `final_<name>.bin` as little-endian f64, the snapshot block
//! format.

use crate::runtime::{BoundaryAction, CompiledKernel, Func, Op, Program, Side, SrcArr};
use indexmap::IndexMap;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The generated translation units.
pub struct CSources {
    pub kernels_h: String,
    pub driver_c: String,
}

/// Emit C sources for a built program, running `niter` steps.
pub fn emit_c(program: &Program, niter: usize) -> Result<CSources, CodegenError> {
    Emitter::new(program)?.emit(niter)
}

/// Emit and write `kernels.h` and `driver.c` into `dir`.
pub fn write_c(program: &Program, niter: usize, dir: &Path) -> Result<(), CodegenError> {
    let sources = emit_c(program, niter)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("kernels.h"), sources.kernels_h)?;
    std::fs::write(dir.join("driver.c"), sources.driver_c)?;
    Ok(())
}

/// Format an f64 so a correctly-rounding C compiler reproduces its bits:
/// shortest round-trip decimal, which gcc and clang parse exactly.
fn c_f64(v: f64) -> Result<String, CodegenError> {
    if !v.is_finite() {
        return Err(CodegenError::Unsupported(format!(
            "non-finite constant {v} has no portable C literal"
        )));
    }
    Ok(format!("{v:?}"))
}

/// Identifiers the generated C claims for itself, plus C keywords and the
/// parts of libm/libc the sources touch. User arrays or constants landing
/// here are renamed with a `_v` suffix.
const RESERVED: &[&str] = &[
    // C99 keywords.
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while",
    // Library names in scope via the included headers.
    "sin", "cos", "tan", "exp", "exp2", "expm1", "log", "log2", "log10", "sqrt", "cbrt", "pow",
    "round", "floor", "ceil", "trunc", "rint", "nearbyint", "fabs", "fmod", "remainder", "fma",
    "hypot", "tanh", "sinh", "cosh", "asin", "acos", "atan", "atan2", "erf", "erfc", "tgamma",
    "lgamma", "gamma", "y0", "y1", "yn", "j0", "j1", "jn", "nan", "signbit", "memcpy", "fwrite",
    "fopen", "fclose", "exit", "perror", "printf", "fprintf", "main", "stderr", "stdout",
    "FILE", "size_t", "uint64_t",
    // File-scope names this emitter generates.
    "IDX", "NITER", "initialize", "step_once", "apply_boundaries", "dump_field", "INV_PIO2",
    "PIO2_HI", "PIO2_LO", "INV_LN2", "LN2_HI", "LN2_LO", "sin_kernel", "cos_kernel",
    "exp_poly_tail", "expm1_nonneg", "p_sin", "p_cos", "p_exp", "p_tanh", "p_sqrt",
    // Locals inside generated functions that reference arrays.
    "idx", "dst", "src", "k", "n", "x",
];

fn is_reserved(name: &str) -> bool {
    if RESERVED.contains(&name) {
        return true;
    }
    // Register and loop-variable patterns: r0.., i0.., the pmath polynomial
    // constants S1../C1.., and the grid macros N0../H0../STRIDE0...
    for prefix in ["r", "i", "S", "C", "N", "H", "STRIDE"] {
        if let Some(rest) = name.strip_prefix(prefix) {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                return true;
            }
        }
    }
    false
}

struct Emitter<'a> {
    program: &'a Program,
    /// FieldSet slot -> C identifier.
    array_cname: Vec<String>,
    /// Constant name -> C identifier, in plan order.
    const_cname: IndexMap<String, String>,
    /// Constant value bits -> C identifier (first name wins); lets bytecode
    /// immediates print as the named constant they came from.
    value_names: HashMap<u64, String>,
}

impl<'a> Emitter<'a> {
    fn new(program: &'a Program) -> Result<Self, CodegenError> {
        let mut used: HashSet<String> = HashSet::new();
        let mut claim = |name: &str| -> String {
            let mut candidate = name.to_string();
            while is_reserved(&candidate) || used.contains(&candidate) {
                candidate.push_str("_v");
            }
            used.insert(candidate.clone());
            candidate
        };
        let array_cname: Vec<String> = program.fields.names().map(&mut claim).collect();
        let mut const_cname = IndexMap::new();
        let mut value_names = HashMap::new();
        for (name, &value) in &program.plan.constants {
            let cname = claim(name);
            value_names
                .entry(value.to_bits())
                .or_insert_with(|| cname.clone());
            const_cname.insert(name.clone(), cname);
        }
        Ok(Emitter {
            program,
            array_cname,
            const_cname,
            value_names,
        })
    }

    fn value(&self, v: f64) -> Result<String, CodegenError> {
        match self.value_names.get(&v.to_bits()) {
            Some(name) => Ok(name.clone()),
            None => c_f64(v),
        }
    }

    fn kernel_fn(&self, kernel: &CompiledKernel) -> String {
        let sanitized: String = kernel
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        format!("k_{sanitized}")
    }

    fn emit(&self, niter: usize) -> Result<CSources, CodegenError> {
        let mut h = String::new();
        let grid = &self.program.grid;
        let ndim = grid.ndim;

        h.push_str("/* Generated solver kernels. Compile the accompanying driver with\n");
        h.push_str(" *   cc -O2 -ffp-contract=off -fno-fast-math driver.c -lm\n");
        h.push_str(" * Optimisations that reassociate or contract floating point change\n");
        h.push_str(" * the results; the flags above keep the evaluation order exact.\n");
        h.push_str(" */\n");
        h.push_str("#include <math.h>\n");
        h.push_str("#include <stdint.h>\n");
        h.push_str("#include <stdio.h>\n");
        h.push_str("#include <stdlib.h>\n");
        h.push_str("#include <string.h>\n\n");

        // Grid geometry: interior extents, halos, strides, and the affine
        // index macro over interior-relative indices.
        for d in 0..ndim {
            writeln!(h, "#define N{d} {}L", grid.shape[d]).unwrap();
            writeln!(h, "#define H{d} {}L", grid.halos[d]).unwrap();
            writeln!(h, "#define STRIDE{d} {}L", grid.strides[d]).unwrap();
        }
        writeln!(h, "#define PADDED_LEN {}L", grid.padded_len()).unwrap();
        writeln!(h, "#define NITER {niter}L").unwrap();
        let args: Vec<String> = (0..ndim).map(|d| format!("i{d}")).collect();
        let terms: Vec<String> = (0..ndim)
            .map(|d| format!("((i{d}) + H{d}) * STRIDE{d}"))
            .collect();
        writeln!(
            h,
            "#define IDX({}) ({})\n",
            args.join(", "),
            terms.join(" + ")
        )
        .unwrap();

        // Named constants, in plan order.
        for (name, cname) in &self.const_cname {
            let value = self.program.plan.constants[name.as_str()];
            writeln!(h, "static const double {cname} = {};", c_f64(value)?).unwrap();
        }
        h.push('\n');

        // Arrays, zero-initialised like the runtime's allocation.
        for cname in &self.array_cname {
            writeln!(h, "static double {cname}[PADDED_LEN];").unwrap();
        }
        h.push('\n');

        h.push_str(PMATH_C);
        h.push('\n');

        let mut kernel_fns = Vec::new();
        for kernel in self
            .program
            .init
            .iter()
            .chain(&self.program.spatial)
            .chain(&self.program.residual)
            .chain(&self.program.stages)
        {
            self.emit_kernel(&mut h, kernel)?;
            kernel_fns.push(self.kernel_fn(kernel));
        }

        self.emit_boundaries(&mut h);
        self.emit_drivers(&mut h);

        let mut c = String::new();
        c.push_str("#include \"kernels.h\"\n\n");
        c.push_str("int main(void) {\n");
        c.push_str("    initialize();\n");
        c.push_str("    for (long long n = 0; n < NITER; ++n) {\n");
        c.push_str("        step_once();\n");
        c.push_str("    }\n");
        for (name, &slot) in self
            .program
            .plan
            .prognostics
            .iter()
            .zip(&self.program.prognostic_slots)
        {
            writeln!(
                c,
                "    dump_field(\"final_{name}.bin\", {});",
                self.array_cname[slot]
            )
            .unwrap();
        }
        c.push_str("    return 0;\n");
        c.push_str("}\n");

        Ok(CSources {
            kernels_h: h,
            driver_c: c,
        })
    }

    /// One C function per kernel: nested loops over its iteration range,
    /// a register file of `double` locals, one statement per op.
    fn emit_kernel(&self, h: &mut String, kernel: &CompiledKernel) -> Result<(), CodegenError> {
        writeln!(h, "static void {}(void) {{", self.kernel_fn(kernel)).unwrap();
        let ndim = kernel.range.ndim();
        for (d, &(lo, hi)) in kernel.range.0.iter().enumerate() {
            let pad = "    ".repeat(d + 1);
            writeln!(h, "{pad}for (long long i{d} = {lo}; i{d} < {hi}; ++i{d}) {{").unwrap();
        }
        let pad = "    ".repeat(ndim + 1);
        let args: Vec<String> = (0..ndim).map(|d| format!("i{d}")).collect();
        writeln!(h, "{pad}const long long idx = IDX({});", args.join(", ")).unwrap();
        if kernel.reg_count > 0 {
            let regs: Vec<String> = (0..kernel.reg_count).map(|r| format!("r{r}")).collect();
            writeln!(h, "{pad}double {};", regs.join(", ")).unwrap();
        }
        for op in &kernel.ops {
            self.emit_op(h, &pad, kernel, op)?;
        }
        for d in (0..ndim).rev() {
            writeln!(h, "{}}}", "    ".repeat(d + 1)).unwrap();
        }
        h.push_str("}\n\n");
        Ok(())
    }

    fn array_of(&self, kernel: &CompiledKernel, src: SrcArr) -> &str {
        match src {
            SrcArr::Read(k) => &self.array_cname[kernel.reads[k as usize]],
            SrcArr::Target(t) => &self.array_cname[kernel.targets[t as usize]],
        }
    }

    fn emit_op(
        &self,
        h: &mut String,
        pad: &str,
        kernel: &CompiledKernel,
        op: &Op,
    ) -> Result<(), CodegenError> {
        match op {
            Op::Const { dst, value } => {
                writeln!(h, "{pad}r{dst} = {};", self.value(*value)?).unwrap();
            }
            Op::Read { dst, src, offset } => {
                let arr = self.array_of(kernel, *src);
                writeln!(h, "{pad}r{dst} = {arr}[idx{}];", offset_suffix(*offset)).unwrap();
            }
            Op::Idx { dst, dim } => {
                writeln!(h, "{pad}r{dst} = (double)i{dim};").unwrap();
            }
            Op::Add { dst, a, b } => writeln!(h, "{pad}r{dst} = r{a} + r{b};").unwrap(),
            Op::Mul { dst, a, b } => writeln!(h, "{pad}r{dst} = r{a} * r{b};").unwrap(),
            Op::Neg { dst, a } => writeln!(h, "{pad}r{dst} = -r{a};").unwrap(),
            Op::Recip { dst, a } => writeln!(h, "{pad}r{dst} = 1.0 / r{a};").unwrap(),
            Op::Call { dst, a, f } => {
                let name = match f {
                    Func::Sin => "p_sin",
                    Func::Cos => "p_cos",
                    Func::Exp => "p_exp",
                    Func::Tanh => "p_tanh",
                    Func::Sqrt => "p_sqrt",
                };
                writeln!(h, "{pad}r{dst} = {name}(r{a});").unwrap();
            }
            Op::Stencil { dst, array, terms } => {
                let arr = &self.array_cname[kernel.reads[*array as usize]];
                for (i, (offset, weight)) in terms.iter().enumerate() {
                    let assign = if i == 0 { "=" } else { "+=" };
                    writeln!(
                        h,
                        "{pad}r{dst} {assign} {} * {arr}[idx{}];",
                        self.value(*weight)?,
                        offset_suffix(*offset)
                    )
                    .unwrap();
                }
            }
            Op::Store { src, target } => {
                let arr = &self.array_cname[kernel.targets[*target as usize]];
                writeln!(h, "{pad}{arr}[idx] = r{src};").unwrap();
            }
        }
        Ok(())
    }

    /// Halo passes in action order: straight copies (periodic) and
    /// sign-carrying mirrors (symmetry), looping the full padded extent of
    /// every transverse direction exactly like the runtime.
    fn emit_boundaries(&self, h: &mut String) {
        let grid = &self.program.grid;
        let ndim = grid.ndim;
        h.push_str("static void apply_boundaries(void) {\n");
        for action in &self.program.boundary {
            let direction = action.direction();
            // Loop headers over the transverse directions, padded extents.
            let mut depth = 0;
            let mut outer: Vec<usize> = Vec::new();
            for d in 0..ndim {
                if d == direction {
                    continue;
                }
                let pad = "    ".repeat(depth + 1);
                writeln!(
                    h,
                    "{pad}for (long long i{d} = -H{d}; i{d} < N{d} + H{d}; ++i{d}) {{"
                )
                .unwrap();
                outer.push(d);
                depth += 1;
            }
            let pad = "    ".repeat(depth + 1);
            let body = "    ".repeat(depth + 2);
            let index_with = |v: &str| -> String {
                let args: Vec<String> = (0..ndim)
                    .map(|d| {
                        if d == direction {
                            v.to_string()
                        } else {
                            format!("i{d}")
                        }
                    })
                    .collect();
                format!("IDX({})", args.join(", "))
            };
            writeln!(h, "{pad}for (long long k = 1; k <= H{direction}; ++k) {{").unwrap();
            match action {
                BoundaryAction::Periodic { slots, .. } => {
                    for side_expr in ["-k".to_string(), format!("N{direction} - 1 + k")] {
                        writeln!(h, "{body}{{").unwrap();
                        writeln!(h, "{body}    const long long dst = {side_expr};").unwrap();
                        writeln!(
                            h,
                            "{body}    const long long src = ((dst % N{direction}) + N{direction}) % N{direction};"
                        )
                        .unwrap();
                        for &slot in slots {
                            let arr = &self.array_cname[slot];
                            writeln!(
                                h,
                                "{body}    {arr}[{}] = {arr}[{}];",
                                index_with("dst"),
                                index_with("src")
                            )
                            .unwrap();
                        }
                        writeln!(h, "{body}}}").unwrap();
                    }
                }
                BoundaryAction::Symmetry { side, slots, .. } => {
                    let (dst, src) = match side {
                        Side::Lower => ("-k".to_string(), "k - 1".to_string()),
                        Side::Upper => (
                            format!("N{direction} - 1 + k"),
                            format!("N{direction} - k"),
                        ),
                    };
                    writeln!(h, "{body}{{").unwrap();
                    writeln!(h, "{body}    const long long dst = {dst};").unwrap();
                    writeln!(h, "{body}    const long long src = {src};").unwrap();
                    for &(slot, parity) in slots {
                        let arr = &self.array_cname[slot];
                        let sign = if parity < 0 { "-" } else { "" };
                        writeln!(
                            h,
                            "{body}    {arr}[{}] = {sign}{arr}[{}];",
                            index_with("dst"),
                            index_with("src")
                        )
                        .unwrap();
                    }
                    writeln!(h, "{body}}}").unwrap();
                }
            }
            writeln!(h, "{pad}}}").unwrap();
            for d in (0..depth).rev() {
                writeln!(h, "{}}}", "    ".repeat(d + 1)).unwrap();
            }
        }
        h.push_str("}\n\n");
    }

    /// `initialize`, `step_once`, and the little-endian field dump.
    fn emit_drivers(&self, h: &mut String) {
        h.push_str("static void initialize(void) {\n");
        for kernel in &self.program.init {
            writeln!(h, "    {}();", self.kernel_fn(kernel)).unwrap();
        }
        h.push_str("    apply_boundaries();\n");
        h.push_str("}\n\n");

        h.push_str("static void step_once(void) {\n");
        for (stage, kernel) in self.program.stages.iter().enumerate() {
            writeln!(h, "    /* stage {stage} */").unwrap();
            h.push_str("    apply_boundaries();\n");
            for k in &self.program.spatial {
                writeln!(h, "    {}();", self.kernel_fn(k)).unwrap();
            }
            for k in &self.program.residual {
                writeln!(h, "    {}();", self.kernel_fn(k)).unwrap();
            }
            writeln!(h, "    {}();", self.kernel_fn(kernel)).unwrap();
        }
        h.push_str("}\n\n");

        // Interior points, row-major, explicit little-endian bytes.
        let grid = &self.program.grid;
        let ndim = grid.ndim;
        h.push_str("static void dump_field(const char *path, const double *field) {\n");
        h.push_str("    FILE *out = fopen(path, \"wb\");\n");
        h.push_str("    if (!out) { perror(path); exit(3); }\n");
        for d in 0..ndim {
            let pad = "    ".repeat(d + 1);
            writeln!(h, "{pad}for (long long i{d} = 0; i{d} < N{d}; ++i{d}) {{").unwrap();
        }
        let pad = "    ".repeat(ndim + 1);
        let args: Vec<String> = (0..ndim).map(|d| format!("i{d}")).collect();
        writeln!(h, "{pad}uint64_t bits;").unwrap();
        writeln!(
            h,
            "{pad}memcpy(&bits, &field[IDX({})], sizeof bits);",
            args.join(", ")
        )
        .unwrap();
        writeln!(h, "{pad}unsigned char bytes[8];").unwrap();
        writeln!(h, "{pad}for (int b = 0; b < 8; ++b) {{").unwrap();
        writeln!(
            h,
            "{pad}    bytes[b] = (unsigned char)(bits >> (8 * b));"
        )
        .unwrap();
        writeln!(h, "{pad}}}").unwrap();
        writeln!(
            h,
            "{pad}if (fwrite(bytes, 1, 8, out) != 8) {{ perror(path); exit(3); }}"
        )
        .unwrap();
        for d in (0..ndim).rev() {
            writeln!(h, "{}}}", "    ".repeat(d + 1)).unwrap();
        }
        h.push_str("    if (fclose(out) != 0) { perror(path); exit(3); }\n");
        h.push_str("}\n\n");
    }
}

fn offset_suffix(offset: i64) -> String {
    match offset {
        0 => String::new(),
        o if o > 0 => format!(" + {o}"),
        o => format!(" - {}", -o),
    }
}

/// The portable elementary functions, transliterated from [`crate::pmath`]
/// with the same constants, expression shapes, and branch structure. Rust
/// `f64::round` rounds halfway cases away from zero exactly like C99
/// `round`; `as i64` truncates toward zero exactly like a C integer cast;
/// `f64::from_bits` is the `memcpy` idiom.
const PMATH_C: &str = r#"static const double INV_PIO2 = 6.36619772367581382433e-01;
static const double PIO2_HI = 1.57079632673412561417e+00;
static const double PIO2_LO = 6.07710050650619224932e-11;

static const double S1 = -1.66666666666666324348e-01;
static const double S2 = 8.33333333332248946124e-03;
static const double S3 = -1.98412698298579493134e-04;
static const double S4 = 2.75573137070700676789e-06;
static const double S5 = -2.50507602534068634195e-08;
static const double S6 = 1.58969099521155010221e-10;

static const double C1 = 4.16666666666666019037e-02;
static const double C2 = -1.38888888888741095749e-03;
static const double C3 = 2.48015872894767294178e-05;
static const double C4 = -2.75573143513906633035e-07;
static const double C5 = 2.08757232129817482790e-09;
static const double C6 = -1.13596475577881948265e-11;

static const double INV_LN2 = 1.44269504088896338700e+00;
static const double LN2_HI = 6.93147180369123816490e-01;
static const double LN2_LO = 1.90821492927058770002e-10;

static double sin_kernel(double r) {
    double z = r * r;
    return r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
}

static double cos_kernel(double r) {
    double z = r * r;
    return 1.0 - 0.5 * z + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
}

static double p_sin(double x) {
    double nf = round(x * INV_PIO2);
    double r = (x - nf * PIO2_HI) - nf * PIO2_LO;
    long long q = ((long long)nf % 4 + 4) % 4;
    switch (q) {
    case 0: return sin_kernel(r);
    case 1: return cos_kernel(r);
    case 2: return -sin_kernel(r);
    default: return -cos_kernel(r);
    }
}

static double p_cos(double x) {
    double nf = round(x * INV_PIO2);
    double r = (x - nf * PIO2_HI) - nf * PIO2_LO;
    long long q = ((long long)nf % 4 + 4) % 4;
    switch (q) {
    case 0: return cos_kernel(r);
    case 1: return -sin_kernel(r);
    case 2: return -cos_kernel(r);
    default: return sin_kernel(r);
    }
}

static double exp_poly_tail(double r) {
    return r * (1.0
        + r * (0.5
            + r * (0.16666666666666666
                + r * (0.041666666666666664
                    + r * (0.008333333333333333
                        + r * (0.001388888888888889
                            + r * (1.984126984126984e-4
                                + r * (2.48015873015873e-5
                                    + r * (2.7557319223985893e-6
                                        + r * (2.755731922398589e-7
                                            + r * (2.505210838544172e-8
                                                + r * 2.08767569878681e-9)))))))))));
}

static double p_exp(double x) {
    if (x > 709.0) {
        return HUGE_VAL;
    }
    if (x < -745.0) {
        return 0.0;
    }
    double nf = round(x * INV_LN2);
    double r = (x - nf * LN2_HI) - nf * LN2_LO;
    double p = 1.0 + exp_poly_tail(r);
    long long n = (long long)nf;
    uint64_t bits = (uint64_t)(n + 1023) << 52;
    double scale;
    memcpy(&scale, &bits, sizeof scale);
    return p * scale;
}

static double expm1_nonneg(double x) {
    if (x < 0.34657359027997264) {
        return exp_poly_tail(x);
    }
    double nf = round(x * INV_LN2);
    double r = (x - nf * LN2_HI) - nf * LN2_LO;
    long long n = (long long)nf;
    uint64_t bits = (uint64_t)(n + 1023) << 52;
    double scale;
    memcpy(&scale, &bits, sizeof scale);
    return scale * exp_poly_tail(r) + (scale - 1.0);
}

static double p_tanh(double x) {
    double ax = x < 0.0 ? -x : x;
    if (ax > 20.0) {
        return x < 0.0 ? -1.0 : 1.0;
    }
    double t = expm1_nonneg(2.0 * ax);
    double v = t / (t + 2.0);
    return x < 0.0 ? -v : v;
}

static double p_sqrt(double x) {
    return sqrt(x);
}
"#;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_setup;
    use crate::pipeline::build_program;

    fn wave_program() -> Program {
        let spec = parse_setup(
            r#"
            [problem]
            ndim = 1
            equations = ["Eq(Der(phi, t), -c*Conservative(phi, x0))"]

            [constants]
            c = 0.5
            twopi = 6.283185307179586
            dt = 4.0e-4
            niter = 100

            [grid]
            shape = [100]
            deltas = [0.01]

            [schemes]
            spatial_order = 4
            temporal = "rk3"

            [boundary]
            x0 = "periodic"

            [initial]
            phi = "sin(twopi*idx0*delta0)"
        "#,
        )
        .unwrap();
        build_program(&spec, 1).unwrap()
    }

    #[test]
    fn emitted_sources_carry_the_problem() {
        let program = wave_program();
        let sources = emit_c(&program, 100).unwrap();
        let h = &sources.kernels_h;
        assert!(h.contains("#define N0 100L"));
        assert!(h.contains("#define NITER 100L"));
        assert!(h.contains("static double phi[PADDED_LEN];"));
        assert!(h.contains("static const double twopi = 6.283185307179586;"));
        assert!(h.contains("static double p_sin(double x)"));
        assert!(h.contains("r0 = p_sin(r1);") || h.contains("= p_sin("));
        assert!(sources.driver_c.contains("dump_field(\"final_phi.bin\", phi);"));
        // The stencil accumulates with named rc constants, ascending offsets.
        assert!(h.contains("* phi[idx - 2];"));
        assert!(h.contains("rc0"));
    }

    #[test]
    fn reserved_identifiers_are_renamed_consistently() {
        let spec = parse_setup(
            r#"
            [problem]
            ndim = 1
            equations = ["Eq(Der(gamma, t), -c*Conservative(gamma, x0))"]

            [constants]
            c = 1.0
            dt = 1.0e-3
            niter = 1

            [grid]
            shape = [8]
            deltas = [0.125]

            [schemes]
            spatial_order = 2
            temporal = "euler"

            [boundary]
            x0 = "periodic"
        "#,
        )
        .unwrap();
        let program = build_program(&spec, 1).unwrap();
        let sources = emit_c(&program, 1).unwrap();
        let h = &sources.kernels_h;
        // "gamma" collides with libm; the array is renamed everywhere, and
        // the dump keeps the user-facing field name in the file name.
        assert!(h.contains("static double gamma_v[PADDED_LEN];"));
        assert!(!h.contains("static double gamma[PADDED_LEN];"));
        assert!(sources
            .driver_c
            .contains("dump_field(\"final_gamma.bin\", gamma_v);"));
    }

    #[test]
    fn emitted_c_matches_the_runtime_bit_for_bit() {
        let cc = match std::process::Command::new("cc").arg("--version").output() {
            Ok(out) if out.status.success() => "cc",
            _ => {
                eprintln!("skipping: no C compiler on PATH");
                return;
            }
        };
        let steps = 25usize;
        let mut program = wave_program();
        let sources = emit_c(&program, steps).unwrap();
        for _ in 0..steps {
            program.step();
        }
        let grid = &program.grid;
        let phi = program.fields.get("phi").unwrap();
        let mut expect: Vec<u8> = Vec::new();
        for start in grid.interior_row_starts() {
            for v in &phi[start..start + grid.row_len()] {
                expect.extend_from_slice(&v.to_le_bytes());
            }
        }

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("kernels.h"), &sources.kernels_h).unwrap();
        std::fs::write(dir.path().join("driver.c"), &sources.driver_c).unwrap();
        let compile = std::process::Command::new(cc)
            .current_dir(dir.path())
            .args([
                "-O2",
                "-ffp-contract=off",
                "-fno-fast-math",
                "driver.c",
                "-lm",
                "-o",
                "driver",
            ])
            .output()
            .unwrap();
        assert!(
            compile.status.success(),
            "cc failed:\n{}",
            String::from_utf8_lossy(&compile.stderr)
        );
        let run = std::process::Command::new("./driver")
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(run.status.success(), "driver exited with {:?}", run.status);
        let got = std::fs::read(dir.path().join("final_phi.bin")).unwrap();
        assert_eq!(got.len(), expect.len());
        assert!(got == expect, "emitted C drifted from the runtime");
    }

    #[test]
    fn float_literals_round_trip_through_their_text() {
        for v in [
            0.1,
            -1.0 / 3.0,
            6.283185307179586,
            1.0e-300,
            -0.0,
            4.9e-324,
            1234567890.123456,
        ] {
            let text = c_f64(v).unwrap();
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{text}");
        }
        assert!(c_f64(f64::INFINITY).is_err());
        assert!(c_f64(f64::NAN).is_err());
    }
}
