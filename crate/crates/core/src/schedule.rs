//! Per-timestep dataflow schedule.
//!
//! A schedule is a sequence of macro states, each holding one or more
//! phases. Within a phase the four lanes run concurrently: the weight-fetch
//! lane, the pointer/vector-fetch lane, the matrix-multiply lane and the
//! elementwise/accumulate lane (which also carries adder-tree and activation
//! ops, since those hang off the accumulator and stay off the critical
//! path). Phases inside a state run back to back, states run sequentially,
//! and an op may only read values produced in strictly earlier phases.
//!
//! The canonical schedule interleaves the nine matrix products so that the
//! weights of the next state stream in while the current state computes, and
//! each gate's activation overlaps the following matrix product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationChoice, LayerConfig};
use crate::quantize::{
    align_bias, fixed_diag_mul, fixed_elemmul, fixed_matvec, fixed_sum, lut_map, ActLuts,
    FixedVector, LutFunction, QuantizedLstmParams, QuantizedState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    SpMV,
    ElemMul,
    AdderTree,
    Activation,
    Fetch,
}

/// Which nonlinearity an activation op applies; `CellInput`/`CellOutput`
/// defer to the [`ActivationChoice`] supplied at execution time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActFn {
    Sigmoid,
    CellInput,
    CellOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmOp {
    pub kind: OpKind,
    pub operands: Vec<String>,
    pub produces: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<ActFn>,
}

impl LstmOp {
    fn new(kind: OpKind, operands: &[&str], produces: &str) -> Self {
        Self {
            kind,
            operands: operands.iter().map(|s| s.to_string()).collect(),
            produces: produces.to_string(),
            function: None,
        }
    }

    fn activation(function: ActFn, operands: &[&str], produces: &str) -> Self {
        Self {
            function: Some(function),
            ..Self::new(OpKind::Activation, operands, produces)
        }
    }
}

/// One concurrent time slice: at most one op per lane.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weight_fetch: Vec<LstmOp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vector_fetch: Vec<LstmOp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spmv: Vec<LstmOp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elemmul: Vec<LstmOp>,
}

impl Phase {
    pub fn ops(&self) -> impl Iterator<Item = &LstmOp> {
        self.weight_fetch
            .iter()
            .chain(&self.vector_fetch)
            .chain(&self.spmv)
            .chain(&self.elemmul)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub name: String,
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub states: Vec<MacroState>,
    /// Names available before the first phase (resident state and on-chip
    /// side parameters).
    pub inputs: Vec<String>,
}

impl Schedule {
    pub fn all_ops(&self) -> impl Iterator<Item = &LstmOp> {
        self.states
            .iter()
            .flat_map(|s| s.phases.iter().flat_map(|p| p.ops()))
    }

    pub fn op_count(&self, kind: OpKind) -> usize {
        self.all_ops().filter(|op| op.kind == kind).count()
    }

    /// Flat phase list with state names, in execution order.
    pub fn phases(&self) -> Vec<(&str, usize, &Phase)> {
        self.states
            .iter()
            .flat_map(|s| {
                s.phases
                    .iter()
                    .enumerate()
                    .map(move |(i, p)| (s.name.as_str(), i, p))
            })
            .collect()
    }
}

/// Builds the canonical schedule for one timestep of a layer.
pub fn build_schedule(config: &LayerConfig) -> Result<Schedule> {
    config.validate()?;
    let peephole = config.has_peephole;
    let projection = config.has_projection;

    let fetch = |name: &str| LstmOp::new(OpKind::Fetch, &[], name);
    let spmv = |m: &str, v: &str, out: &str| LstmOp::new(OpKind::SpMV, &[m, v], out);
    let emul = |a: &str, b: &str, out: &str| LstmOp::new(OpKind::ElemMul, &[a, b], out);

    let gate = |f: ActFn, sx: &str, sr: &str, peep: Option<&str>, bias: &str, out: &str| {
        let mut operands = vec![sx, sr];
        if let Some(p) = peep {
            operands.push(p);
        }
        operands.push(bias);
        LstmOp::activation(f, &operands, out)
    };

    let mut states: Vec<MacroState> = Vec::with_capacity(7);
    let mut state = |name: &str, phases: Vec<Phase>| {
        states.push(MacroState {
            name: name.to_string(),
            phases,
        });
    };

    let ph =
        |wf: Option<LstmOp>, vf: Option<LstmOp>, sm: Option<LstmOp>, em: Option<LstmOp>| Phase {
            weight_fetch: wf.into_iter().collect(),
            vector_fetch: vf.into_iter().collect(),
            spmv: sm.into_iter().collect(),
            elemmul: em.into_iter().collect(),
        };

    state(
        "INITIAL",
        vec![
            ph(Some(fetch("W_ix")), Some(fetch("x_t")), None, None),
            ph(None, Some(fetch("side_params")), None, None),
        ],
    );
    state(
        "STATE_1",
        vec![ph(
            Some(fetch("W_ir")),
            Some(fetch("y_prev")),
            Some(spmv("W_ix", "x_t", "s_ix")),
            None,
        )],
    );
    state(
        "STATE_2",
        vec![
            ph(
                Some(fetch("W_fx")),
                None,
                Some(spmv("W_ir", "y_prev", "s_ir")),
                peephole.then(|| emul("W_ic", "c_prev", "p_ic")),
            ),
            ph(
                Some(fetch("W_fr")),
                None,
                Some(spmv("W_fx", "x_t", "s_fx")),
                Some(gate(
                    ActFn::Sigmoid,
                    "s_ix",
                    "s_ir",
                    peephole.then_some("p_ic"),
                    "b_i",
                    "i",
                )),
            ),
        ],
    );
    state(
        "STATE_3",
        vec![
            ph(
                Some(fetch("W_cx")),
                None,
                Some(spmv("W_fr", "y_prev", "s_fr")),
                peephole.then(|| emul("W_fc", "c_prev", "p_fc")),
            ),
            ph(
                Some(fetch("W_cr")),
                None,
                Some(spmv("W_cx", "x_t", "s_cx")),
                Some(gate(
                    ActFn::Sigmoid,
                    "s_fx",
                    "s_fr",
                    peephole.then_some("p_fc"),
                    "b_f",
                    "f",
                )),
            ),
            ph(None, None, None, Some(emul("f", "c_prev", "fc"))),
        ],
    );
    state(
        "STATE_4",
        vec![
            ph(
                Some(fetch("W_ox")),
                None,
                Some(spmv("W_cr", "y_prev", "s_cr")),
                None,
            ),
            ph(
                Some(fetch("W_or")),
                None,
                Some(spmv("W_ox", "x_t", "s_ox")),
                Some(gate(ActFn::CellInput, "s_cx", "s_cr", None, "b_c", "g")),
            ),
            ph(None, None, None, Some(emul("i", "g", "ig"))),
        ],
    );
    state(
        "STATE_5",
        vec![
            ph(
                projection.then(|| fetch("W_ym")),
                None,
                Some(spmv("W_or", "y_prev", "s_or")),
                Some(LstmOp::new(OpKind::AdderTree, &["fc", "ig"], "c_t")),
            ),
            ph(
                None,
                None,
                None,
                peephole.then(|| emul("W_oc", "c_t", "p_oc")),
            ),
            ph(
                None,
                None,
                None,
                Some(LstmOp::activation(ActFn::CellOutput, &["c_t"], "h_c")),
            ),
        ],
    );
    let m_name = if projection { "m" } else { "y_t" };
    let mut state6 = vec![
        ph(
            None,
            None,
            None,
            Some(gate(
                ActFn::Sigmoid,
                "s_ox",
                "s_or",
                peephole.then_some("p_oc"),
                "b_o",
                "o",
            )),
        ),
        ph(None, None, None, Some(emul("o", "h_c", m_name))),
    ];
    if projection {
        state6.push(ph(None, None, Some(spmv("W_ym", "m", "y_t")), None));
    }
    state("STATE_6", state6);

    let mut inputs = vec!["c_prev".to_string()];
    for b in ["b_i", "b_f", "b_c", "b_o"] {
        inputs.push(b.to_string());
    }
    if peephole {
        for p in ["W_ic", "W_fc", "W_oc"] {
            inputs.push(p.to_string());
        }
    }
    Ok(Schedule { states, inputs })
}

/// One broken rule found by [`validate_schedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub state: String,
    pub phase: usize,
    pub message: String,
}

/// Checks dependencies, unit exclusivity, lane discipline, weight-fetch
/// serialization and producer uniqueness. Returns every violation found;
/// never fails outright.
pub fn validate_schedule(schedule: &Schedule) -> Vec<Violation> {
    use std::collections::HashMap;

    let mut violations = Vec::new();
    let mut produced_at: HashMap<&str, usize> = HashMap::new();
    let phases = schedule.phases();

    // Pass 1: record producers, flag duplicates.
    for (global, (state, phase_idx, phase)) in phases.iter().enumerate() {
        for op in phase.ops() {
            if schedule.inputs.iter().any(|i| i == &op.produces) {
                violations.push(Violation {
                    state: state.to_string(),
                    phase: *phase_idx,
                    message: format!("op produces {} which is declared an input", op.produces),
                });
            }
            if produced_at.insert(op.produces.as_str(), global).is_some() {
                violations.push(Violation {
                    state: state.to_string(),
                    phase: *phase_idx,
                    message: format!("value {} has more than one producer", op.produces),
                });
            }
        }
    }

    for (global, (state, phase_idx, phase)) in phases.iter().enumerate() {
        let violation = |message: String| Violation {
            state: state.to_string(),
            phase: *phase_idx,
            message,
        };

        // Lane discipline: one op per lane per phase, kinds matching lanes.
        for (lane, ops, allowed) in [
            ("weight-fetch", &phase.weight_fetch, &[OpKind::Fetch][..]),
            ("vector-fetch", &phase.vector_fetch, &[OpKind::Fetch][..]),
            ("spmv", &phase.spmv, &[OpKind::SpMV][..]),
            (
                "elemmul",
                &phase.elemmul,
                &[OpKind::ElemMul, OpKind::AdderTree, OpKind::Activation][..],
            ),
        ] {
            if ops.len() > 1 {
                violations.push(violation(format!(
                    "{lane} lane holds {} ops in one phase",
                    ops.len()
                )));
            }
            for op in ops {
                if !allowed.contains(&op.kind) {
                    violations.push(violation(format!(
                        "{lane} lane cannot execute a {:?} op",
                        op.kind
                    )));
                }
            }
        }
        // Unit exclusivity across lanes, in case ops were misplaced.
        let spmv_count = phase.ops().filter(|o| o.kind == OpKind::SpMV).count();
        if spmv_count > 1 {
            violations.push(violation(format!(
                "{spmv_count} matrix products share one phase"
            )));
        }
        let emul_count = phase.ops().filter(|o| o.kind == OpKind::ElemMul).count();
        if emul_count > 1 {
            violations.push(violation(format!(
                "{emul_count} elementwise products share one phase"
            )));
        }
        if phase.weight_fetch.len() > 1 {
            violations.push(violation(
                "weight fetches must serialize on the weight-memory lane".to_string(),
            ));
        }

        // Dependencies: operands must be inputs or produced strictly earlier.
        for op in phase.ops() {
            if op.kind == OpKind::Activation && op.function.is_none() {
                violations.push(violation(format!(
                    "activation producing {} has no function tag",
                    op.produces
                )));
            }
            match op.kind {
                OpKind::SpMV | OpKind::ElemMul if op.operands.len() != 2 => {
                    violations.push(violation(format!(
                        "{:?} producing {} needs exactly two operands",
                        op.kind, op.produces
                    )));
                }
                _ => {}
            }
            for operand in &op.operands {
                if schedule.inputs.iter().any(|i| i == operand) {
                    continue;
                }
                match produced_at.get(operand.as_str()) {
                    Some(&p) if p < global => {}
                    Some(&p) if p == global => violations.push(violation(format!(
                        "{} reads {operand} produced in the same phase",
                        op.produces
                    ))),
                    Some(_) => violations.push(violation(format!(
                        "{} reads {operand} produced in a later phase",
                        op.produces
                    ))),
                    None => violations.push(violation(format!(
                        "{} reads {operand} which nothing produces",
                        op.produces
                    ))),
                }
            }
        }
    }
    violations
}

/// Graphviz rendering of the op dependency graph. Deterministic output.
pub fn schedule_to_dot(schedule: &Schedule) -> String {
    let mut out = String::from("digraph schedule {\n  rankdir=LR;\n");
    for (state, phase_idx, phase) in schedule.phases() {
        for op in phase.ops() {
            out.push_str(&format!(
                "  \"{}\" [label=\"{}\\n{:?} {state}:{phase_idx}\"];\n",
                op.produces, op.produces, op.kind
            ));
        }
    }
    for (_, _, phase) in schedule.phases() {
        for op in phase.ops() {
            for operand in &op.operands {
                if schedule.all_ops().any(|o| &o.produces == operand) {
                    out.push_str(&format!("  \"{}\" -> \"{}\";\n", operand, op.produces));
                }
            }
        }
    }
    out.push_str("}\n");
    out
}

// ---------------------------------------------------------------------------
// Functional executor
// ---------------------------------------------------------------------------

/// Runs a schedule against quantized parameters, phase by phase, applying
/// each op with the same fixed-point primitives as the integer step. Used to
/// prove a schedule computes the right function regardless of intra-phase
/// interleaving.
pub fn execute_schedule(
    schedule: &Schedule,
    qp: &QuantizedLstmParams,
    luts: &ActLuts,
    acts: ActivationChoice,
    x_t: &FixedVector,
    state: &QuantizedState,
) -> Result<(FixedVector, QuantizedState)> {
    execute_with_order(schedule, qp, luts, acts, x_t, state, |n| (0..n).collect())
}

/// Same as [`execute_schedule`] but permutes intra-phase op order with a
/// seeded generator; results must not depend on the permutation.
pub fn execute_schedule_shuffled(
    schedule: &Schedule,
    qp: &QuantizedLstmParams,
    luts: &ActLuts,
    acts: ActivationChoice,
    x_t: &FixedVector,
    state: &QuantizedState,
    seed: u64,
) -> Result<(FixedVector, QuantizedState)> {
    let mut rng = seed.max(1);
    execute_with_order(schedule, qp, luts, acts, x_t, state, move |n| {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates with a xorshift generator.
        for i in (1..n).rev() {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            let j = (rng % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        order
    })
}

fn execute_with_order(
    schedule: &Schedule,
    qp: &QuantizedLstmParams,
    luts: &ActLuts,
    acts: ActivationChoice,
    x_t: &FixedVector,
    state: &QuantizedState,
    mut order: impl FnMut(usize) -> Vec<usize>,
) -> Result<(FixedVector, QuantizedState)> {
    use std::collections::BTreeMap;

    let mid = qp.plan.intermediate;
    let mut env: BTreeMap<String, FixedVector> = BTreeMap::new();
    env.insert("x_t".into(), x_t.clone());
    env.insert("y_prev".into(), state.y.clone());
    env.insert("c_prev".into(), state.c.clone());

    let out_fmt = |produces: &str| {
        if produces == "y_t" {
            qp.plan.input
        } else {
            mid
        }
    };
    let lut_for = |f: ActFn| match f {
        ActFn::Sigmoid => &luts.sigmoid,
        ActFn::CellInput => luts.get(LutFunction::for_activation(acts.cell_input)),
        ActFn::CellOutput => luts.get(LutFunction::for_activation(acts.cell_output)),
    };

    for (state_name, phase_idx, phase) in schedule.phases() {
        let ops: Vec<&LstmOp> = phase.ops().collect();
        for idx in order(ops.len()) {
            let op = ops[idx];
            let fetch_env = |name: &str| -> Result<&FixedVector> {
                env.get(name).ok_or_else(|| {
                    Error::Container(format!(
                        "{state_name}:{phase_idx}: value {name} not yet produced"
                    ))
                })
            };
            let result = match op.kind {
                OpKind::Fetch => continue,
                OpKind::SpMV => {
                    let w = qp.tensor(&op.operands[0])?;
                    fixed_matvec(w, fetch_env(&op.operands[1])?, out_fmt(&op.produces))?
                }
                OpKind::ElemMul => {
                    let fmt = out_fmt(&op.produces);
                    if let Ok(w) = qp.tensor(&op.operands[0]) {
                        fixed_diag_mul(w, fetch_env(&op.operands[1])?, fmt)?
                    } else {
                        fixed_elemmul(
                            fetch_env(&op.operands[0])?,
                            fetch_env(&op.operands[1])?,
                            fmt,
                        )?
                    }
                }
                OpKind::AdderTree => {
                    let parts: Vec<&[i16]> = op
                        .operands
                        .iter()
                        .map(|n| fetch_env(n).map(|v| v.raw.as_slice()))
                        .collect::<Result<_>>()?;
                    fixed_sum(&parts, out_fmt(&op.produces))
                }
                OpKind::Activation => {
                    let function = op.function.ok_or_else(|| {
                        Error::Container(format!(
                            "activation producing {} has no function tag",
                            op.produces
                        ))
                    })?;
                    // Operands are prior vectors plus bias tensors that get
                    // aligned into the intermediate format.
                    let mut aligned: Vec<Vec<i16>> = Vec::new();
                    let mut vector_names: Vec<&str> = Vec::new();
                    for name in &op.operands {
                        if env.contains_key(name.as_str()) {
                            vector_names.push(name);
                        } else {
                            aligned.push(align_bias(qp.tensor(name)?, mid));
                        }
                    }
                    let mut parts: Vec<&[i16]> = Vec::new();
                    for name in &vector_names {
                        parts.push(&env[*name].raw);
                    }
                    for a in &aligned {
                        parts.push(a);
                    }
                    let pre = fixed_sum(&parts, mid);
                    lut_map(lut_for(function), &pre)
                }
            };
            env.insert(op.produces.clone(), result);
        }
    }

    let y = env
        .remove("y_t")
        .ok_or_else(|| Error::Container("schedule never produced y_t".into()))?;
    let c = env
        .remove("c_t")
        .ok_or_else(|| Error::Container("schedule never produced c_t".into()))?;
    let next = QuantizedState { c, y: y.clone() };
    Ok((y, next))
}
