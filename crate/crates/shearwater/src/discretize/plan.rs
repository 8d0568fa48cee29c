//! Planner passes: classify targets, materialize derivative work arrays,
//! hoist grid invariants, propagate iteration ranges, pool temporaries,
//! lower stencils and constants, fuse kernels, and lower the time scheme.

use super::{
    central_coefficients, field_reads, rename_fields, Assign, DiscretizeError, EvalKind,
    Evaluation, IterationRange, Kernel, LoweredStencil, Plan, TemporalScheme,
};
use crate::expr::{EinsteinTerm, Equation, Expr, Head, Rational};
use crate::pmath;
use indexmap::{IndexMap, IndexSet};
use std::collections::{BTreeSet, HashMap};

pub struct PlanInput<'a> {
    /// Expanded prognostic component equations (lhs `Der(field, t)`).
    pub equations: &'a [Equation],
    /// Expanded formula component equations (lhs a bare field).
    pub formulas: &'a [Equation],
    pub shape: &'a [usize],
    pub deltas: &'a [f64],
    pub accuracy: usize,
    pub scheme: TemporalScheme,
    pub constants: &'a IndexMap<String, f64>,
    pub dt: f64,
}

/// Names the solver reserves for generated arrays and constants; user
/// fields and constants must avoid them.
pub fn reserved_name_reason(name: &str) -> Option<&'static str> {
    if name == "dt" || name == "t" {
        return Some("reserved for the time step and time symbol");
    }
    let digit_tail = |prefix: &str| {
        name.strip_prefix(prefix)
            .map(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            .unwrap_or(false)
    };
    if digit_tail("wk") || name.starts_with("res_") || name.starts_with("acc_") {
        return Some("reserved prefix for generated work arrays");
    }
    if digit_tail("rc") || digit_tail("delta") || digit_tail("idx") || digit_tail("x") {
        return Some("reserved for generated constants and grid symbols");
    }
    if name.starts_with("diag_") {
        return Some("reserved prefix for diagnostic work arrays");
    }
    None
}

pub fn plan(input: PlanInput) -> Result<Plan, DiscretizeError> {
    let ndim = input.shape.len();
    if ndim == 0 || input.deltas.len() != ndim {
        return Err(DiscretizeError::Value(
            "shape and deltas must be nonempty and the same length".into(),
        ));
    }
    if input.accuracy < 2 || input.accuracy % 2 != 0 {
        return Err(DiscretizeError::Value(format!(
            "spatial accuracy must be a positive even integer, got {}",
            input.accuracy
        )));
    }

    // --- classify targets -------------------------------------------------
    let mut prognostics: Vec<String> = Vec::new();
    let mut rhs_list: Vec<Expr> = Vec::new();
    for eq in input.equations {
        let name = prognostic_target(&eq.lhs)?;
        if prognostics.contains(&name) {
            return Err(DiscretizeError::Value(format!(
                "two equations advance the field {name}"
            )));
        }
        prognostics.push(name);
        rhs_list.push(eq.rhs.clone());
    }
    if prognostics.is_empty() {
        return Err(DiscretizeError::Value("no prognostic equations".into()));
    }

    let mut formula_map: IndexMap<String, Expr> = IndexMap::new();
    for eq in input.formulas {
        let name = match &eq.lhs {
            Expr::Field(f) => f.name.clone(),
            other => {
                return Err(DiscretizeError::Value(format!(
                    "formula left-hand side must be a bare field, got {other}"
                )))
            }
        };
        if formula_map.contains_key(&name) || prognostics.contains(&name) {
            return Err(DiscretizeError::Value(format!(
                "field {name} is defined more than once"
            )));
        }
        if contains_derivative(&eq.rhs) {
            return Err(DiscretizeError::Unsupported(format!(
                "formula for {name} contains a spatial derivative"
            )));
        }
        formula_map.insert(name, eq.rhs.clone());
    }

    for name in prognostics.iter().chain(formula_map.keys()) {
        if let Some(reason) = reserved_name_reason(name) {
            return Err(DiscretizeError::Value(format!(
                "field name {name} is not allowed: {reason}"
            )));
        }
    }

    // --- constant registry -------------------------------------------------
    let mut registry = ConstRegistry::new(input.constants)?;
    registry.insert_named("dt", input.dt)?;
    for (d, &dx) in input.deltas.iter().enumerate() {
        registry.insert_named(&format!("delta{d}"), dx)?;
    }

    // --- symbol validation -------------------------------------------------
    let known: IndexSet<String> = prognostics
        .iter()
        .chain(formula_map.keys())
        .cloned()
        .collect();
    for (name, expr) in formula_map.iter() {
        validate_expr(expr, &known, &registry, ndim)
            .map_err(|e| prefix_context(e, &format!("formula for {name}")))?;
    }
    for (name, rhs) in prognostics.iter().zip(&rhs_list) {
        validate_expr(rhs, &known, &registry, ndim)
            .map_err(|e| prefix_context(e, &format!("equation for {name}")))?;
    }

    // --- formula ordering ----------------------------------------------------
    let formula_order = topo_sort_formulas(&formula_map)?;

    // --- evaluations ---------------------------------------------------------
    let mut evals: Vec<Evaluation> = Vec::new();
    let mut tmp_targets: IndexSet<String> = IndexSet::new();
    for name in &formula_order {
        let expr = formula_map[name].clone();
        let deps = deps_of(&expr);
        evals.push(Evaluation {
            target: name.clone(),
            expr,
            kind: EvalKind::Formula,
            deps,
            ext: vec![0; ndim],
        });
    }

    let mut memo: IndexMap<Expr, String> = IndexMap::new();
    let mut next_tmp = 0usize;
    let mut residual_exprs: Vec<Expr> = Vec::new();
    for rhs in &rhs_list {
        residual_exprs.push(materialize(
            rhs,
            &mut evals,
            &mut memo,
            &mut next_tmp,
            &mut tmp_targets,
            ndim,
        )?);
    }

    // --- invariant hoisting ----------------------------------------------------
    let mut inv_memo: IndexMap<Expr, String> = IndexMap::new();
    for i in 0..evals.len() {
        if evals[i].kind == EvalKind::Formula {
            let expr = evals[i].expr.clone();
            let hoisted = hoist_invariants(
                &expr,
                &mut evals,
                &mut inv_memo,
                &mut next_tmp,
                &mut tmp_targets,
                ndim,
            );
            evals[i].expr = hoisted;
            evals[i].deps = deps_of(&evals[i].expr);
        }
    }
    for expr in residual_exprs.iter_mut() {
        *expr = hoist_invariants(
            expr,
            &mut evals,
            &mut inv_memo,
            &mut next_tmp,
            &mut tmp_targets,
            ndim,
        );
    }

    // --- range propagation -------------------------------------------------
    let m = (input.accuracy / 2) as i64;
    let mut needs: IndexMap<String, Vec<i64>> = IndexMap::new();
    let need_of = |needs: &mut IndexMap<String, Vec<i64>>, name: &str| -> Vec<i64> {
        needs.get(name).cloned().unwrap_or_else(|| vec![0; ndim])
    };
    // Residuals evaluate on the interior and read pointwise, so they add no
    // extension; evaluations are visited consumers-first.
    for idx in (0..evals.len()).rev() {
        if evals[idx].kind == EvalKind::Invariant {
            continue;
        }
        let ext = need_of(&mut needs, &evals[idx].target);
        evals[idx].ext = ext.clone();
        for (read, fp) in read_footprints(&evals[idx].expr, m, ndim) {
            let entry = needs.entry(read).or_insert_with(|| vec![0; ndim]);
            for d in 0..ndim {
                entry[d] = entry[d].max(ext[d] + fp[d]);
            }
        }
    }
    for eval in evals.iter_mut() {
        if eval.kind == EvalKind::Invariant {
            eval.ext = need_of(&mut needs, &eval.target);
        }
    }
    let halo = needs
        .values()
        .flat_map(|v| v.iter().copied())
        .max()
        .unwrap_or(0)
        .max(0) as usize;

    // --- temporary pooling ---------------------------------------------------
    let rename = pool_temporaries(&evals, &residual_exprs, &tmp_targets);
    for eval in evals.iter_mut() {
        if let Some(new) = rename.get(&eval.target) {
            eval.target = new.clone();
        }
        eval.expr = rename_fields(&eval.expr, &rename);
        eval.deps = deps_of(&eval.expr);
    }
    for expr in residual_exprs.iter_mut() {
        *expr = rename_fields(expr, &rename);
    }
    let mut work_arrays: Vec<String> = Vec::new();
    for eval in &evals {
        if eval.kind != EvalKind::Invariant && eval.target.starts_with("wk") {
            if !work_arrays.contains(&eval.target) {
                work_arrays.push(eval.target.clone());
            }
        }
    }
    for eval in &evals {
        if eval.kind == EvalKind::Invariant {
            work_arrays.push(eval.target.clone());
        }
    }

    // --- stencil lowering ------------------------------------------------------
    let mut stencils: IndexMap<(usize, usize), LoweredStencil> = IndexMap::new();
    for eval in &evals {
        if eval.kind != EvalKind::Derivative {
            continue;
        }
        let Expr::Derivative(leaf) = &eval.expr else {
            return Err(DiscretizeError::UnassignedDerivative(eval.target.clone()));
        };
        let direction = leaf.dirs[0];
        let degree = leaf.dirs.len();
        if stencils.contains_key(&(direction, degree)) {
            continue;
        }
        let spec = central_coefficients(degree, input.accuracy)?;
        let denom = match degree {
            1 => input.deltas[direction],
            _ => input.deltas[direction] * input.deltas[direction],
        };
        let mut terms = Vec::new();
        for (&k, w) in spec.offsets.iter().zip(&spec.weights) {
            if w.is_zero() {
                continue;
            }
            let value = w.to_f64() / denom;
            terms.push((k, registry.named_value(value)));
        }
        stencils.insert(
            (direction, degree),
            LoweredStencil {
                direction,
                degree,
                terms,
            },
        );
    }

    // --- constant folding --------------------------------------------------------
    for eval in evals.iter_mut() {
        eval.expr = fold_constants(&eval.expr, &mut registry)?;
        eval.deps = deps_of(&eval.expr);
    }
    for expr in residual_exprs.iter_mut() {
        *expr = fold_constants(expr, &mut registry)?;
    }

    // --- kernels --------------------------------------------------------------
    let init_evals: Vec<&Evaluation> = evals
        .iter()
        .filter(|e| e.kind == EvalKind::Invariant)
        .collect();
    let spatial_evals: Vec<&Evaluation> = evals
        .iter()
        .filter(|e| e.kind != EvalKind::Invariant)
        .collect();
    let init_kernels = fuse(&init_evals, "init", input.shape);
    let spatial_kernels = fuse(&spatial_evals, "spatial", input.shape);

    let mut residual_kernels = Vec::new();
    let mut residual_arrays = Vec::new();
    for (field, expr) in prognostics.iter().zip(&residual_exprs) {
        let target = format!("res_{field}");
        residual_kernels.push(kernel_from_assigns(
            &format!("residual_{field}"),
            vec![Assign {
                target: target.clone(),
                expr: expr.clone(),
            }],
            IterationRange::interior(input.shape),
        ));
        residual_arrays.push(target);
    }

    let accumulator_arrays: Vec<String> =
        prognostics.iter().map(|f| format!("acc_{f}")).collect();
    let stage_kernels = temporal_kernels(
        input.scheme,
        &prognostics,
        input.shape,
        &mut registry,
    );

    let formula_targets = formula_order;
    let plan = Plan {
        ndim,
        shape: input.shape.to_vec(),
        deltas: input.deltas.to_vec(),
        halo,
        accuracy: input.accuracy,
        scheme: input.scheme,
        prognostics,
        formula_targets,
        work_arrays,
        residual_arrays,
        accumulator_arrays,
        init_kernels,
        spatial_kernels,
        residual_kernels,
        stage_kernels,
        constants: registry.table,
        stencils,
        evaluations: evals,
    };
    validate_schedule(&plan)?;
    Ok(plan)
}

fn prognostic_target(lhs: &Expr) -> Result<String, DiscretizeError> {
    if let Expr::Apply(Head::Der, args) = lhs {
        if let (Expr::Field(f), Expr::Term(t)) = (&args[0], &args[1]) {
            if t.is_time {
                return Ok(f.name.clone());
            }
        }
    }
    Err(DiscretizeError::Value(format!(
        "equation left-hand side must be a time derivative of a field, got {lhs}"
    )))
}

fn prefix_context(e: DiscretizeError, ctx: &str) -> DiscretizeError {
    match e {
        DiscretizeError::Value(s) => DiscretizeError::Value(format!("{ctx}: {s}")),
        DiscretizeError::UnknownField(s) => DiscretizeError::UnknownField(format!("{ctx}: {s}")),
        DiscretizeError::Unsupported(s) => DiscretizeError::Unsupported(format!("{ctx}: {s}")),
        other => other,
    }
}

fn deps_of(expr: &Expr) -> IndexSet<String> {
    let mut out = IndexSet::new();
    field_reads(expr, &mut out);
    out
}

fn contains_derivative(expr: &Expr) -> bool {
    match expr {
        Expr::Derivative(_) => true,
        Expr::Apply(Head::Der | Head::Conservative | Head::Skew, _) => true,
        Expr::Sum(cs) | Expr::Product(cs) => cs.iter().any(contains_derivative),
        Expr::Apply(_, cs) => cs.iter().any(contains_derivative),
        Expr::Power(a, b) => contains_derivative(a) || contains_derivative(b),
        _ => false,
    }
}

fn contains_coordinate(expr: &Expr) -> bool {
    match expr {
        Expr::Term(t) => t.is_coordinate,
        Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => {
            cs.iter().any(contains_coordinate)
        }
        Expr::Power(a, b) => contains_coordinate(a) || contains_coordinate(b),
        Expr::Derivative(leaf) => contains_coordinate(&leaf.operand),
        _ => false,
    }
}

fn contains_field(expr: &Expr) -> bool {
    match expr {
        Expr::Field(_) => true,
        Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => cs.iter().any(contains_field),
        Expr::Power(a, b) => contains_field(a) || contains_field(b),
        Expr::Derivative(leaf) => contains_field(&leaf.operand),
        _ => false,
    }
}

fn validate_expr(
    expr: &Expr,
    known: &IndexSet<String>,
    registry: &ConstRegistry,
    ndim: usize,
) -> Result<(), DiscretizeError> {
    match expr {
        Expr::Rational(_) | Expr::Float(_) => Ok(()),
        Expr::Term(t) => {
            if t.is_time {
                return Err(DiscretizeError::Unsupported(
                    "time-dependent right-hand sides are not supported".into(),
                ));
            }
            if t.is_coordinate {
                let axis = t.coordinate_axis().ok_or_else(|| {
                    DiscretizeError::Value(format!("unresolved coordinate {}", t.base))
                })?;
                if axis >= ndim {
                    return Err(DiscretizeError::Value(format!(
                        "coordinate x{axis} exceeds the {ndim}-dimensional grid"
                    )));
                }
                return Ok(());
            }
            if t.is_constant {
                let name = t.concrete_name().unwrap_or_else(|| t.base.clone());
                if registry.get(&name).is_none() {
                    return Err(DiscretizeError::UnknownField(format!(
                        "constant {name} has no value"
                    )));
                }
                return Ok(());
            }
            Err(DiscretizeError::UnknownField(t.base.clone()))
        }
        Expr::Field(f) => {
            if known.contains(&f.name) {
                Ok(())
            } else {
                Err(DiscretizeError::UnknownField(f.name.clone()))
            }
        }
        Expr::Sum(cs) | Expr::Product(cs) => {
            for c in cs {
                validate_expr(c, known, registry, ndim)?;
            }
            Ok(())
        }
        Expr::Power(base, exp) => {
            validate_expr(base, known, registry, ndim)?;
            match exp.as_ref() {
                Expr::Rational(r) if r.is_integer() => {
                    let n = r.as_integer().unwrap_or(i64::MAX);
                    if n.abs() > 16 {
                        return Err(DiscretizeError::Unsupported(format!(
                            "exponent {n} is too large to lower as repeated multiplication"
                        )));
                    }
                    Ok(())
                }
                Expr::Rational(r) if r.denominator() == 2.into() => Ok(()),
                other => Err(DiscretizeError::Unsupported(format!(
                    "exponent {other} is not an integer or half-integer literal"
                ))),
            }
        }
        Expr::Apply(h, args) => {
            if !h.is_elementary() {
                return Err(DiscretizeError::Unsupported(format!(
                    "operator {} survived expansion",
                    h.name()
                )));
            }
            for a in args {
                validate_expr(a, known, registry, ndim)?;
            }
            Ok(())
        }
        Expr::Derivative(leaf) => {
            if leaf.dirs.is_empty()
                || leaf.dirs.len() > 2
                || (leaf.dirs.len() == 2 && leaf.dirs[0] != leaf.dirs[1])
                || leaf.dirs.iter().any(|&d| d >= ndim)
            {
                return Err(DiscretizeError::Unsupported(format!(
                    "derivative directions {:?} cannot be lowered",
                    leaf.dirs
                )));
            }
            validate_expr(&leaf.operand, known, registry, ndim)
        }
    }
}

fn topo_sort_formulas(
    formula_map: &IndexMap<String, Expr>,
) -> Result<Vec<String>, DiscretizeError> {
    let mut order = Vec::new();
    let mut placed: IndexSet<String> = IndexSet::new();
    let mut remaining: Vec<&String> = formula_map.keys().collect();
    while !remaining.is_empty() {
        let before = order.len();
        remaining.retain(|name| {
            let deps = deps_of(&formula_map[*name]);
            let ready = deps
                .iter()
                .all(|d| !formula_map.contains_key(d) || placed.contains(d));
            if ready {
                order.push((*name).clone());
                placed.insert((*name).clone());
            }
            !ready
        });
        if order.len() == before {
            return Err(DiscretizeError::Cycle(remaining[0].clone()));
        }
    }
    Ok(order)
}

fn fresh_tmp(next: &mut usize) -> String {
    let name = format!("tmp{next}");
    *next += 1;
    name
}

/// Replace every derivative leaf in `expr` with a read of a dedicated work
/// array, creating operand and derivative evaluations as needed
/// (deduplicated by the normalized expression).
fn materialize(
    expr: &Expr,
    evals: &mut Vec<Evaluation>,
    memo: &mut IndexMap<Expr, String>,
    next_tmp: &mut usize,
    tmp_targets: &mut IndexSet<String>,
    ndim: usize,
) -> Result<Expr, DiscretizeError> {
    match expr {
        Expr::Derivative(leaf) => {
            let operand = materialize(&leaf.operand, evals, memo, next_tmp, tmp_targets, ndim)?;
            let source = match &operand {
                Expr::Field(f) => f.name.clone(),
                other => match memo.get(other) {
                    Some(t) => t.clone(),
                    None => {
                        let t = fresh_tmp(next_tmp);
                        evals.push(Evaluation {
                            target: t.clone(),
                            expr: other.clone(),
                            kind: EvalKind::Formula,
                            deps: deps_of(other),
                            ext: vec![0; ndim],
                        });
                        memo.insert(other.clone(), t.clone());
                        tmp_targets.insert(t.clone());
                        t
                    }
                },
            };
            let key = Expr::derivative(Expr::field(&source), leaf.dirs.clone());
            let target = match memo.get(&key) {
                Some(t) => t.clone(),
                None => {
                    let t = fresh_tmp(next_tmp);
                    evals.push(Evaluation {
                        target: t.clone(),
                        expr: key.clone(),
                        kind: EvalKind::Derivative,
                        deps: IndexSet::from([source.clone()]),
                        ext: vec![0; ndim],
                    });
                    memo.insert(key, t.clone());
                    tmp_targets.insert(t.clone());
                    t
                }
            };
            Ok(Expr::field(&target))
        }
        Expr::Sum(cs) => Ok(Expr::Sum(
            cs.iter()
                .map(|c| materialize(c, evals, memo, next_tmp, tmp_targets, ndim))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Product(cs) => Ok(Expr::Product(
            cs.iter()
                .map(|c| materialize(c, evals, memo, next_tmp, tmp_targets, ndim))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Power(b, e) => Ok(Expr::Power(
            Box::new(materialize(b, evals, memo, next_tmp, tmp_targets, ndim)?),
            e.clone(),
        )),
        Expr::Apply(h, args) => Ok(Expr::Apply(
            *h,
            args.iter()
                .map(|a| materialize(a, evals, memo, next_tmp, tmp_targets, ndim))
                .collect::<Result<_, _>>()?,
        )),
        _ => Ok(expr.clone()),
    }
}

/// Pull maximal coordinate-dependent, field-independent subtrees out into
/// startup-phase work arrays so the time loop never re-evaluates them.
fn hoist_invariants(
    expr: &Expr,
    evals: &mut Vec<Evaluation>,
    memo: &mut IndexMap<Expr, String>,
    next_tmp: &mut usize,
    tmp_targets: &mut IndexSet<String>,
    ndim: usize,
) -> Expr {
    let is_operation = matches!(
        expr,
        Expr::Sum(_) | Expr::Product(_) | Expr::Power(..) | Expr::Apply(..)
    );
    if is_operation && contains_coordinate(expr) && !contains_field(expr) {
        let target = match memo.get(expr) {
            Some(t) => t.clone(),
            None => {
                let t = fresh_tmp(next_tmp);
                evals.push(Evaluation {
                    target: t.clone(),
                    expr: expr.clone(),
                    kind: EvalKind::Invariant,
                    deps: IndexSet::new(),
                    ext: vec![0; ndim],
                });
                memo.insert(expr.clone(), t.clone());
                tmp_targets.insert(t.clone());
                t
            }
        };
        return Expr::field(&target);
    }
    match expr {
        Expr::Sum(cs) => Expr::Sum(
            cs.iter()
                .map(|c| hoist_invariants(c, evals, memo, next_tmp, tmp_targets, ndim))
                .collect(),
        ),
        Expr::Product(cs) => Expr::Product(
            cs.iter()
                .map(|c| hoist_invariants(c, evals, memo, next_tmp, tmp_targets, ndim))
                .collect(),
        ),
        Expr::Power(b, e) => Expr::Power(
            Box::new(hoist_invariants(b, evals, memo, next_tmp, tmp_targets, ndim)),
            e.clone(),
        ),
        Expr::Apply(h, args) => Expr::Apply(
            *h,
            args.iter()
                .map(|a| hoist_invariants(a, evals, memo, next_tmp, tmp_targets, ndim))
                .collect(),
        ),
        _ => expr.clone(),
    }
}

/// Per-array maximum absolute read offset of `expr`, per direction:
/// `m` along a derivative leaf's direction, zero for pointwise reads.
fn read_footprints(expr: &Expr, m: i64, ndim: usize) -> IndexMap<String, Vec<i64>> {
    let mut out: IndexMap<String, Vec<i64>> = IndexMap::new();
    collect_footprints(expr, m, ndim, &mut out);
    out
}

fn collect_footprints(expr: &Expr, m: i64, ndim: usize, out: &mut IndexMap<String, Vec<i64>>) {
    match expr {
        Expr::Field(f) => {
            out.entry(f.name.clone()).or_insert_with(|| vec![0; ndim]);
        }
        Expr::Derivative(leaf) => {
            if let Expr::Field(f) = &leaf.operand {
                let entry = out
                    .entry(f.name.clone())
                    .or_insert_with(|| vec![0; ndim]);
                entry[leaf.dirs[0]] = entry[leaf.dirs[0]].max(m);
            } else {
                collect_footprints(&leaf.operand, m, ndim, out);
            }
        }
        Expr::Sum(cs) | Expr::Product(cs) | Expr::Apply(_, cs) => {
            for c in cs {
                collect_footprints(c, m, ndim, out);
            }
        }
        Expr::Power(a, b) => {
            collect_footprints(a, m, ndim, out);
            collect_footprints(b, m, ndim, out);
        }
        _ => {}
    }
}

/// Greedy lifetime-based reuse of temporary work arrays. Returns the rename
/// map from `tmp*` names to pooled `wk*` names (invariants get the slots
/// after the pool).
fn pool_temporaries(
    evals: &[Evaluation],
    residual_exprs: &[Expr],
    tmp_targets: &IndexSet<String>,
) -> IndexMap<String, String> {
    const READ_BY_RESIDUAL: usize = usize::MAX;
    let mut last_read: HashMap<String, usize> = HashMap::new();
    for (i, eval) in evals.iter().enumerate() {
        for dep in &eval.deps {
            last_read.insert(dep.clone(), i);
        }
    }
    for expr in residual_exprs {
        for dep in deps_of(expr) {
            last_read.insert(dep, READ_BY_RESIDUAL);
        }
    }

    let mut rename: IndexMap<String, String> = IndexMap::new();
    let mut free: BTreeSet<usize> = BTreeSet::new();
    let mut active: Vec<(usize, usize)> = Vec::new(); // (slot, last read index)
    let mut slots = 0usize;
    for (i, eval) in evals.iter().enumerate() {
        if eval.kind == EvalKind::Invariant || !tmp_targets.contains(&eval.target) {
            continue;
        }
        active.retain(|&(slot, last)| {
            if last < i {
                free.insert(slot);
                false
            } else {
                true
            }
        });
        let slot = match free.iter().next().copied() {
            Some(s) => {
                free.remove(&s);
                s
            }
            None => {
                slots += 1;
                slots - 1
            }
        };
        rename.insert(eval.target.clone(), format!("wk{slot}"));
        let last = last_read.get(&eval.target).copied().unwrap_or(i);
        active.push((slot, last));
    }
    let mut next = slots;
    for eval in evals {
        if eval.kind == EvalKind::Invariant {
            rename.insert(eval.target.clone(), format!("wk{next}"));
            next += 1;
        }
    }
    rename
}

// --- constants ----------------------------------------------------------

struct ConstRegistry {
    table: IndexMap<String, f64>,
    by_bits: HashMap<u64, String>,
    next_rc: usize,
}

impl ConstRegistry {
    fn new(user: &IndexMap<String, f64>) -> Result<ConstRegistry, DiscretizeError> {
        let mut table = IndexMap::new();
        for (name, &value) in user {
            if let Some(reason) = reserved_name_reason(name) {
                return Err(DiscretizeError::Value(format!(
                    "constant name {name} is not allowed: {reason}"
                )));
            }
            if !value.is_finite() {
                return Err(DiscretizeError::Value(format!(
                    "constant {name} must be finite, got {value}"
                )));
            }
            table.insert(name.clone(), value);
        }
        Ok(ConstRegistry {
            table,
            by_bits: HashMap::new(),
            next_rc: 0,
        })
    }

    fn insert_named(&mut self, name: &str, value: f64) -> Result<(), DiscretizeError> {
        if self.table.contains_key(name) {
            return Err(DiscretizeError::Value(format!(
                "constant {name} is defined twice"
            )));
        }
        self.table.insert(name.to_string(), value);
        Ok(())
    }

    /// Name for a generated constant value, deduplicated bitwise.
    fn named_value(&mut self, value: f64) -> String {
        if let Some(name) = self.by_bits.get(&value.to_bits()) {
            return name.clone();
        }
        let name = format!("rc{}", self.next_rc);
        self.next_rc += 1;
        self.table.insert(name.clone(), value);
        self.by_bits.insert(value.to_bits(), name.clone());
        name
    }

    fn get(&self, name: &str) -> Option<f64> {
        self.table.get(name).copied()
    }
}

/// Evaluate a grid-independent expression to a value, using the same
/// elementary functions the runtime will.
fn eval_const(expr: &Expr, registry: &ConstRegistry) -> Result<f64, DiscretizeError> {
    match expr {
        Expr::Rational(r) => Ok(r.to_f64()),
        Expr::Float(v) => Ok(v.0),
        Expr::Term(t) if t.is_constant => {
            let name = t.concrete_name().unwrap_or_else(|| t.base.clone());
            registry
                .get(&name)
                .ok_or_else(|| DiscretizeError::UnknownField(name))
        }
        Expr::Sum(cs) => {
            let mut acc = 0.0;
            for (i, c) in cs.iter().enumerate() {
                let v = eval_const(c, registry)?;
                acc = if i == 0 { v } else { acc + v };
            }
            Ok(acc)
        }
        Expr::Product(cs) => {
            let mut acc = 1.0;
            for (i, c) in cs.iter().enumerate() {
                let v = eval_const(c, registry)?;
                acc = if i == 0 { v } else { acc * v };
            }
            Ok(acc)
        }
        Expr::Power(base, exp) => {
            let b = eval_const(base, registry)?;
            let r = match exp.as_ref() {
                Expr::Rational(r) => r.clone(),
                _ => {
                    return Err(DiscretizeError::Unsupported(
                        "non-literal exponent in constant expression".into(),
                    ))
                }
            };
            pow_value(b, &r)
        }
        Expr::Apply(h, args) => {
            let a = eval_const(&args[0], registry)?;
            Ok(match h {
                Head::Sin => pmath::p_sin(a),
                Head::Cos => pmath::p_cos(a),
                Head::Exp => pmath::p_exp(a),
                Head::Tanh => pmath::p_tanh(a),
                Head::Sqrt => pmath::p_sqrt(a),
                _ => {
                    return Err(DiscretizeError::Unsupported(format!(
                        "{} in constant expression",
                        h.name()
                    )))
                }
            })
        }
        _ => Err(DiscretizeError::Unsupported(format!(
            "cannot evaluate {expr} as a constant"
        ))),
    }
}

/// Integer and half-integer powers by the exact sequence both backends use:
/// repeated multiplication, square roots, and one final reciprocal.
pub(crate) fn pow_value(base: f64, exp: &Rational) -> Result<f64, DiscretizeError> {
    let (num, half) = if exp.is_integer() {
        (exp.as_integer().unwrap(), false)
    } else if exp.denominator() == 2.into() {
        let doubled = exp * &Rational::integer(2);
        (doubled.as_integer().unwrap(), true)
    } else {
        return Err(DiscretizeError::Unsupported(format!(
            "exponent {exp} is not an integer or half-integer"
        )));
    };
    let b = if half { base.sqrt() } else { base };
    let n = num.unsigned_abs();
    let mut acc = 1.0;
    for i in 0..n {
        acc = if i == 0 { b } else { acc * b };
    }
    if n == 0 {
        acc = 1.0;
    }
    Ok(if num < 0 { 1.0 / acc } else { acc })
}

/// Fold grid-independent operation subtrees into named constants, turn
/// non-integer rational literals into named constants, and integer rational
/// literals into float literals. Exponents are left untouched.
fn fold_constants(
    expr: &Expr,
    registry: &mut ConstRegistry,
) -> Result<Expr, DiscretizeError> {
    let is_operation = matches!(
        expr,
        Expr::Sum(_) | Expr::Product(_) | Expr::Power(..) | Expr::Apply(..)
    );
    if is_operation && expr.is_grid_independent() {
        let value = eval_const(expr, registry)?;
        return Ok(named_or_literal(value, registry));
    }
    match expr {
        Expr::Rational(r) => {
            if r.is_integer() {
                Ok(Expr::float(r.to_f64()))
            } else {
                Ok(named_or_literal(r.to_f64(), registry))
            }
        }
        Expr::Float(_) | Expr::Term(_) | Expr::Field(_) => Ok(expr.clone()),
        Expr::Sum(cs) => Ok(Expr::Sum(
            cs.iter()
                .map(|c| fold_constants(c, registry))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Product(cs) => Ok(Expr::Product(
            cs.iter()
                .map(|c| fold_constants(c, registry))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Power(b, e) => Ok(Expr::Power(
            Box::new(fold_constants(b, registry)?),
            e.clone(),
        )),
        Expr::Apply(h, args) => Ok(Expr::Apply(
            *h,
            args.iter()
                .map(|a| fold_constants(a, registry))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Derivative(leaf) => {
            let mut new_leaf = (**leaf).clone();
            new_leaf.operand = fold_constants(&leaf.operand, registry)?;
            Ok(Expr::Derivative(Box::new(new_leaf)))
        }
    }
}

fn named_or_literal(value: f64, registry: &mut ConstRegistry) -> Expr {
    if value == value.trunc() && value.abs() <= 1.0e15 {
        Expr::float(value)
    } else {
        Expr::Term(EinsteinTerm::constant(&registry.named_value(value)))
    }
}

// --- kernels --------------------------------------------------------------

/// Build one kernel from a slice of evaluations sharing a range.
pub(super) fn kernel_from_evals(name: &str, evals: &[&Evaluation], shape: &[usize]) -> Kernel {
    let ndim = shape.len();
    let range = IterationRange::extended(shape, &pad_ext(&evals[0].ext, ndim));
    let statements = evals
        .iter()
        .map(|e| Assign {
            target: e.target.clone(),
            expr: e.expr.clone(),
        })
        .collect();
    finish_kernel(name, statements, range, ndim)
}

pub(super) fn kernel_from_assigns(
    name: &str,
    statements: Vec<Assign>,
    range: IterationRange,
) -> Kernel {
    let ndim = range.ndim();
    finish_kernel(name, statements, range, ndim)
}

fn pad_ext(ext: &[i64], ndim: usize) -> Vec<i64> {
    let mut v = ext.to_vec();
    v.resize(ndim, 0);
    v
}

fn finish_kernel(name: &str, statements: Vec<Assign>, range: IterationRange, ndim: usize) -> Kernel {
    let mut targets: IndexSet<String> = IndexSet::new();
    let mut all_reads: IndexSet<String> = IndexSet::new();
    let mut footprints: IndexMap<String, Vec<i64>> = IndexMap::new();
    for stmt in &statements {
        targets.insert(stmt.target.clone());
        field_reads(&stmt.expr, &mut all_reads);
        for (read, fp) in read_footprints(&stmt.expr, 1, ndim) {
            let entry = footprints.entry(read).or_insert_with(|| vec![0; ndim]);
            for d in 0..ndim {
                entry[d] = entry[d].max(fp[d]);
            }
        }
    }
    let reads: IndexSet<String> = all_reads.difference(&targets).cloned().collect();
    let read_writes: IndexSet<String> = all_reads.intersection(&targets).cloned().collect();
    let writes: IndexSet<String> = targets.difference(&all_reads).cloned().collect();
    Kernel {
        name: name.to_string(),
        statements,
        reads,
        writes,
        read_writes,
        range,
        footprints,
    }
}

/// Greedy fusion of consecutive evaluations with identical ranges and no
/// dependence or overlap between members.
fn fuse(evals: &[&Evaluation], prefix: &str, shape: &[usize]) -> Vec<Kernel> {
    let mut kernels: Vec<Kernel> = Vec::new();
    let mut run: Vec<&Evaluation> = Vec::new();
    let mut run_targets: IndexSet<String> = IndexSet::new();
    let mut run_reads: IndexSet<String> = IndexSet::new();
    let flush = |run: &mut Vec<&Evaluation>,
                 kernels: &mut Vec<Kernel>,
                 run_targets: &mut IndexSet<String>,
                 run_reads: &mut IndexSet<String>| {
        if !run.is_empty() {
            let name = format!("{prefix}_{}", kernels.len());
            kernels.push(kernel_from_evals(&name, run, shape));
            run.clear();
            run_targets.clear();
            run_reads.clear();
        }
    };
    for eval in evals {
        let compatible = run.is_empty()
            || (run[0].ext == eval.ext
                && eval.deps.is_disjoint(&run_targets)
                && !run_reads.contains(&eval.target)
                && !run_targets.contains(&eval.target));
        if !compatible {
            flush(&mut run, &mut kernels, &mut run_targets, &mut run_reads);
        }
        run.push(eval);
        run_targets.insert(eval.target.clone());
        run_reads.extend(eval.deps.iter().cloned());
    }
    flush(&mut run, &mut kernels, &mut run_targets, &mut run_reads);
    kernels
}

fn temporal_kernels(
    scheme: TemporalScheme,
    prognostics: &[String],
    shape: &[usize],
    registry: &mut ConstRegistry,
) -> Vec<Kernel> {
    let mut kernels = Vec::new();
    for (s, stage) in scheme.stages().iter().enumerate() {
        let mut statements = Vec::new();
        for f in prognostics {
            let acc = format!("acc_{f}");
            let res = format!("res_{f}");
            let dt_term = Expr::Term(EinsteinTerm::constant("dt"));
            let increment = Expr::Product(vec![dt_term, Expr::field(&res)]);
            let acc_expr = if stage.alpha.is_zero() {
                increment
            } else {
                let alpha = Expr::Term(EinsteinTerm::constant(
                    &registry.named_value(stage.alpha.to_f64()),
                ));
                Expr::Sum(vec![
                    Expr::Product(vec![alpha, Expr::field(&acc)]),
                    increment,
                ])
            };
            statements.push(Assign {
                target: acc.clone(),
                expr: acc_expr,
            });
            let step = if stage.beta.is_one() {
                Expr::field(&acc)
            } else {
                let beta = Expr::Term(EinsteinTerm::constant(
                    &registry.named_value(stage.beta.to_f64()),
                ));
                Expr::Product(vec![beta, Expr::field(&acc)])
            };
            statements.push(Assign {
                target: f.clone(),
                expr: Expr::Sum(vec![Expr::field(f), step]),
            });
        }
        kernels.push(kernel_from_assigns(
            &format!("temporal_{s}"),
            statements,
            IterationRange::interior(shape),
        ));
    }
    kernels
}

/// Replay the per-step schedule statement by statement and confirm every
/// array is written before it is read, and that no access can leave the
/// padded extents.
fn validate_schedule(plan: &Plan) -> Result<(), DiscretizeError> {
    // Prognostics carry state in from the initial condition; invariants are
    // filled once at startup. Everything else must be produced in order.
    let mut written: IndexSet<String> = plan.prognostics.iter().cloned().collect();
    let mut replay = |kernel: &Kernel, phase: &str| -> Result<(), DiscretizeError> {
        for stmt in &kernel.statements {
            let mut reads = IndexSet::new();
            field_reads(&stmt.expr, &mut reads);
            for r in &reads {
                if !written.contains(r) {
                    return Err(DiscretizeError::Value(format!(
                        "{phase} kernel {} reads {} before it is written",
                        kernel.name, r
                    )));
                }
            }
            written.insert(stmt.target.clone());
        }
        Ok(())
    };
    for k in &plan.init_kernels {
        replay(k, "startup")?;
    }
    for stage in 0..plan.scheme.stage_count() {
        for k in &plan.spatial_kernels {
            replay(k, "spatial")?;
        }
        for k in &plan.residual_kernels {
            replay(k, "residual")?;
        }
        replay(&plan.stage_kernels[stage], "temporal")?;
    }

    let halo = plan.halo as i64;
    let m = (plan.accuracy / 2) as i64;
    let all_kernels = plan
        .init_kernels
        .iter()
        .chain(&plan.spatial_kernels)
        .chain(&plan.residual_kernels)
        .chain(&plan.stage_kernels);
    for k in all_kernels {
        for (d, &(lo, hi)) in k.range.0.iter().enumerate() {
            if lo < -halo || hi > plan.shape[d] as i64 + halo {
                return Err(DiscretizeError::Value(format!(
                    "kernel {} range exceeds the halo in direction {d}",
                    k.name
                )));
            }
            for (_, fp) in &k.footprints {
                let reach = fp.get(d).copied().unwrap_or(0) * m;
                if lo - reach < -halo || hi + reach > plan.shape[d] as i64 + halo {
                    return Err(DiscretizeError::Value(format!(
                        "kernel {} stencil reach exceeds the halo in direction {d}",
                        k.name
                    )));
                }
            }
        }
    }
    Ok(())
}
