//! Floating-point reference LSTM cell with peephole connections and an
//! output projection, plus the parameter container the rest of the pipeline
//! consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Dimensions and feature switches of one LSTM layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Length of the recurrent output `y`. Must equal `hidden_dim` when the
    /// projection is disabled.
    pub proj_dim: usize,
    pub has_peephole: bool,
    pub has_projection: bool,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.proj_dim == 0 {
            return Err(Error::Shape("all layer dimensions must be >= 1".into()));
        }
        if self.has_projection {
            if self.proj_dim > self.hidden_dim {
                return Err(Error::Shape(format!(
                    "proj_dim {} exceeds hidden_dim {}",
                    self.proj_dim, self.hidden_dim
                )));
            }
        } else if self.proj_dim != self.hidden_dim {
            return Err(Error::Shape(
                "proj_dim must equal hidden_dim when projection is disabled".into(),
            ));
        }
        Ok(())
    }

    /// Length of the emitted `y` vector.
    pub fn output_dim(&self) -> usize {
        self.proj_dim
    }
}

/// Diagonal weights feeding the cell state directly into the gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peepholes {
    pub w_ic: Vec<f64>,
    pub w_fc: Vec<f64>,
    pub w_oc: Vec<f64>,
}

/// Canonical tensor names used by manifests, quantization plans and the
/// scheduler. The nine matrices listed first are the matrix-vector operands;
/// the rest are dense side parameters.
pub const MATVEC_TENSORS: [&str; 9] = [
    "W_ix", "W_fx", "W_cx", "W_ox", "W_ir", "W_fr", "W_cr", "W_or", "W_ym",
];
pub const PEEPHOLE_TENSORS: [&str; 3] = ["W_ic", "W_fc", "W_oc"];
pub const BIAS_TENSORS: [&str; 4] = ["b_i", "b_f", "b_c", "b_o"];

/// All learned parameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub config: LayerConfig,
    /// Input-to-gate matrices, `hidden_dim x input_dim`.
    pub w_ix: DenseMatrix,
    pub w_fx: DenseMatrix,
    pub w_cx: DenseMatrix,
    pub w_ox: DenseMatrix,
    /// Recurrent matrices, `hidden_dim x proj_dim`.
    pub w_ir: DenseMatrix,
    pub w_fr: DenseMatrix,
    pub w_cr: DenseMatrix,
    pub w_or: DenseMatrix,
    /// Present iff `config.has_peephole`.
    pub peephole: Option<Peepholes>,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    /// Projection matrix `proj_dim x hidden_dim`, present iff
    /// `config.has_projection`.
    pub w_ym: Option<DenseMatrix>,
}

impl LstmParams {
    /// All-zero parameters for a config (used by tests and `gen --zero`).
    pub fn zeros(config: LayerConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let params = Self {
            config,
            w_ix: DenseMatrix::zeros(h, config.input_dim),
            w_fx: DenseMatrix::zeros(h, config.input_dim),
            w_cx: DenseMatrix::zeros(h, config.input_dim),
            w_ox: DenseMatrix::zeros(h, config.input_dim),
            w_ir: DenseMatrix::zeros(h, config.proj_dim),
            w_fr: DenseMatrix::zeros(h, config.proj_dim),
            w_cr: DenseMatrix::zeros(h, config.proj_dim),
            w_or: DenseMatrix::zeros(h, config.proj_dim),
            peephole: config.has_peephole.then(|| Peepholes {
                w_ic: vec![0.0; h],
                w_fc: vec![0.0; h],
                w_oc: vec![0.0; h],
            }),
            b_i: vec![0.0; h],
            b_f: vec![0.0; h],
            b_c: vec![0.0; h],
            b_o: vec![0.0; h],
            w_ym: config
                .has_projection
                .then(|| DenseMatrix::zeros(config.proj_dim, h)),
        };
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let h = self.config.hidden_dim;
        let check = |m: &DenseMatrix, rows: usize, cols: usize, name: &str| -> Result<()> {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Shape(format!(
                    "{name}: expected {rows}x{cols}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        for (m, name) in [
            (&self.w_ix, "W_ix"),
            (&self.w_fx, "W_fx"),
            (&self.w_cx, "W_cx"),
            (&self.w_ox, "W_ox"),
        ] {
            check(m, h, self.config.input_dim, name)?;
        }
        for (m, name) in [
            (&self.w_ir, "W_ir"),
            (&self.w_fr, "W_fr"),
            (&self.w_cr, "W_cr"),
            (&self.w_or, "W_or"),
        ] {
            check(m, h, self.config.proj_dim, name)?;
        }
        if self.config.has_peephole != self.peephole.is_some() {
            return Err(Error::Shape(
                "peephole vectors must be present iff has_peephole".into(),
            ));
        }
        if let Some(p) = &self.peephole {
            for (v, name) in [(&p.w_ic, "W_ic"), (&p.w_fc, "W_fc"), (&p.w_oc, "W_oc")] {
                if v.len() != h {
                    return Err(Error::Shape(format!("{name}: expected length {h}")));
                }
            }
        }
        for (v, name) in [
            (&self.b_i, "b_i"),
            (&self.b_f, "b_f"),
            (&self.b_c, "b_c"),
            (&self.b_o, "b_o"),
        ] {
            if v.len() != h {
                return Err(Error::Shape(format!("{name}: expected length {h}")));
            }
        }
        if self.config.has_projection != self.w_ym.is_some() {
            return Err(Error::Shape(
                "W_ym must be present iff has_projection".into(),
            ));
        }
        if let Some(m) = &self.w_ym {
            check(m, self.config.proj_dim, h, "W_ym")?;
        }
        Ok(())
    }

    /// Look up a matrix-vector operand by its canonical name.
    pub fn matvec_tensor(&self, name: &str) -> Option<&DenseMatrix> {
        match name {
            "W_ix" => Some(&self.w_ix),
            "W_fx" => Some(&self.w_fx),
            "W_cx" => Some(&self.w_cx),
            "W_ox" => Some(&self.w_ox),
            "W_ir" => Some(&self.w_ir),
            "W_fr" => Some(&self.w_fr),
            "W_cr" => Some(&self.w_cr),
            "W_or" => Some(&self.w_or),
            "W_ym" => self.w_ym.as_ref(),
            _ => None,
        }
    }
}

/// Persistent per-timestep state: cell vector and recurrent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub y: Vec<f64>,
}

impl LstmState {
    pub fn zeros(config: &LayerConfig) -> Self {
        Self {
            c: vec![0.0; config.hidden_dim],
            y: vec![0.0; config.output_dim()],
        }
    }
}

/// A model is an ordered stack of layers; layer k+1 consumes layer k's `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub layers: Vec<LstmParams>,
}

impl LstmModel {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if k > 0 {
                let prev_out = self.layers[k - 1].config.output_dim();
                if layer.config.input_dim != prev_out {
                    return Err(Error::Shape(format!(
                        "layer {k} input_dim {} does not match layer {} output {prev_out}",
                        layer.config.input_dim,
                        k - 1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Selects the cell-input (`g`) and cell-output (`h`) activation functions.
/// Gates are always logistic sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationChoice {
    pub cell_input: Activation,
    pub cell_output: Activation,
}

impl Default for ActivationChoice {
    fn default() -> Self {
        Self {
            cell_input: Activation::Tanh,
            cell_output: Activation::Tanh,
        }
    }
}

/// Every intermediate vector of one step, for shape checks and debugging.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub cell_input: Vec<f64>,
    pub cell: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub cell_output: Vec<f64>,
    pub output: Vec<f64>,
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if let Some(idx) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "{name}[{idx}] is not finite: {}",
            v[idx]
        )));
    }
    Ok(())
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// One LSTM timestep. Returns the emitted output and the successor state.
pub fn lstm_step(
    params: &LstmParams,
    x_t: &[f64],
    state: &LstmState,
    acts: ActivationChoice,
) -> Result<(Vec<f64>, LstmState)> {
    let trace = lstm_step_trace(params, x_t, state, acts)?;
    let next = LstmState {
        c: trace.cell,
        y: trace.output.clone(),
    };
    Ok((trace.output, next))
}

/// Same as [`lstm_step`] but keeps all intermediates.
pub fn lstm_step_trace(
    params: &LstmParams,
    x_t: &[f64],
    state: &LstmState,
    acts: ActivationChoice,
) -> Result<StepTrace> {
    let cfg = &params.config;
    if x_t.len() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "input has length {}, expected {}",
            x_t.len(),
            cfg.input_dim
        )));
    }
    if state.c.len() != cfg.hidden_dim || state.y.len() != cfg.output_dim() {
        return Err(Error::Shape(format!(
            "state dims ({}, {}) do not match config ({}, {})",
            state.c.len(),
            state.y.len(),
            cfg.hidden_dim,
            cfg.output_dim()
        )));
    }
    check_finite("x_t", x_t)?;
    check_finite("state.c", &state.c)?;
    check_finite("state.y", &state.y)?;

    let gate_pre = |wx: &DenseMatrix,
                    wr: &DenseMatrix,
                    peep: Option<&[f64]>,
                    cell: &[f64],
                    bias: &[f64]|
     -> Result<Vec<f64>> {
        let mut pre = wx.matvec(x_t)?;
        add_assign(&mut pre, &wr.matvec(&state.y)?);
        if let Some(d) = peep {
            for ((p, w), c) in pre.iter_mut().zip(d).zip(cell) {
                *p += w * c;
            }
        }
        add_assign(&mut pre, bias);
        Ok(pre)
    };

    let peep = params.peephole.as_ref();
    let pre_i = gate_pre(
        &params.w_ix,
        &params.w_ir,
        peep.map(|p| p.w_ic.as_slice()),
        &state.c,
        &params.b_i,
    )?;
    let pre_f = gate_pre(
        &params.w_fx,
        &params.w_fr,
        peep.map(|p| p.w_fc.as_slice()),
        &state.c,
        &params.b_f,
    )?;
    let pre_g = gate_pre(&params.w_cx, &params.w_cr, None, &state.c, &params.b_c)?;

    let sigmoid = Activation::Sigmoid;
    let input_gate: Vec<f64> = pre_i.iter().map(|&x| sigmoid.eval(x)).collect();
    let forget_gate: Vec<f64> = pre_f.iter().map(|&x| sigmoid.eval(x)).collect();
    let cell_input: Vec<f64> = pre_g.iter().map(|&x| acts.cell_input.eval(x)).collect();

    let cell: Vec<f64> = forget_gate
        .iter()
        .zip(&state.c)
        .zip(input_gate.iter().zip(&cell_input))
        .map(|((f, c_prev), (i, g))| f * c_prev + g * i)
        .collect();

    let pre_o = gate_pre(
        &params.w_ox,
        &params.w_or,
        peep.map(|p| p.w_oc.as_slice()),
        &cell,
        &params.b_o,
    )?;
    let output_gate: Vec<f64> = pre_o.iter().map(|&x| sigmoid.eval(x)).collect();

    let cell_output: Vec<f64> = output_gate
        .iter()
        .zip(&cell)
        .map(|(o, c)| o * acts.cell_output.eval(*c))
        .collect();

    let output = match &params.w_ym {
        Some(w_ym) => w_ym.matvec(&cell_output)?,
        None => cell_output.clone(),
    };

    Ok(StepTrace {
        input_gate,
        forget_gate,
        cell_input,
        cell,
        output_gate,
        cell_output,
        output,
    })
}

/// Folds [`lstm_step`] over an input sequence, threading the state.
/// An empty sequence yields an empty output.
pub fn lstm_sequence(
    params: &LstmParams,
    xs: &[Vec<f64>],
    initial: &LstmState,
    acts: ActivationChoice,
) -> Result<Vec<Vec<f64>>> {
    let mut state = initial.clone();
    let mut out = Vec::with_capacity(xs.len());
    for x_t in xs {
        let (y_t, next) = lstm_step(params, x_t, &state, acts)?;
        out.push(y_t);
        state = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_config() -> LayerConfig {
        LayerConfig {
            input_dim: 3,
            hidden_dim: 4,
            proj_dim: 2,
            has_peephole: true,
            has_projection: true,
        }
    }

    fn random_params(seed: u64, cfg: LayerConfig) -> LstmParams {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| {
            DenseMatrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap()
        };
        let h = cfg.hidden_dim;
        let w_ix = mat(h, cfg.input_dim);
        let w_fx = mat(h, cfg.input_dim);
        let w_cx = mat(h, cfg.input_dim);
        let w_ox = mat(h, cfg.input_dim);
        let w_ir = mat(h, cfg.proj_dim);
        let w_fr = mat(h, cfg.proj_dim);
        let w_cr = mat(h, cfg.proj_dim);
        let w_or = mat(h, cfg.proj_dim);
        let w_ym = mat(cfg.proj_dim, h);
        let mut vecf = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        LstmParams {
            config: cfg,
            w_ix,
            w_fx,
            w_cx,
            w_ox,
            w_ir,
            w_fr,
            w_cr,
            w_or,
            peephole: Some(Peepholes {
                w_ic: vecf(h),
                w_fc: vecf(h),
                w_oc: vecf(h),
            }),
            b_i: vecf(h),
            b_f: vecf(h),
            b_c: vecf(h),
            b_o: vecf(h),
            w_ym: Some(w_ym),
        }
    }

    /// Scalar-loop step without any matrix helper; the independent oracle for
    /// the reference implementation.
    fn scalar_oracle_step(
        p: &LstmParams,
        x: &[f64],
        c_prev: &[f64],
        y_prev: &[f64],
        g_is_tanh: bool,
    ) -> (Vec<f64>, Vec<f64>) {
        let h = p.config.hidden_dim;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let peep = p.peephole.as_ref().unwrap();
        let mut i_g = vec![0.0; h];
        let mut f_g = vec![0.0; h];
        let mut g_v = vec![0.0; h];
        for r in 0..h {
            let mut si = p.b_i[r];
            let mut sf = p.b_f[r];
            let mut sg = p.b_c[r];
            for (c, xv) in x.iter().enumerate() {
                si += p.w_ix.get(r, c) * xv;
                sf += p.w_fx.get(r, c) * xv;
                sg += p.w_cx.get(r, c) * xv;
            }
            for (c, yv) in y_prev.iter().enumerate() {
                si += p.w_ir.get(r, c) * yv;
                sf += p.w_fr.get(r, c) * yv;
                sg += p.w_cr.get(r, c) * yv;
            }
            si += peep.w_ic[r] * c_prev[r];
            sf += peep.w_fc[r] * c_prev[r];
            i_g[r] = sig(si);
            f_g[r] = sig(sf);
            g_v[r] = if g_is_tanh { sg.tanh() } else { sig(sg) };
        }
        let c_new: Vec<f64> = (0..h)
            .map(|r| f_g[r] * c_prev[r] + g_v[r] * i_g[r])
            .collect();
        let mut m = vec![0.0; h];
        for r in 0..h {
            let mut so = p.b_o[r];
            for (c, xv) in x.iter().enumerate() {
                so += p.w_ox.get(r, c) * xv;
            }
            for (c, yv) in y_prev.iter().enumerate() {
                so += p.w_or.get(r, c) * yv;
            }
            so += peep.w_oc[r] * c_new[r];
            m[r] = sig(so) * c_new[r].tanh();
        }
        let w_ym = p.w_ym.as_ref().unwrap();
        let mut y = vec![0.0; p.config.proj_dim];
        for r in 0..p.config.proj_dim {
            let mut s = 0.0;
            for (c, mv) in m.iter().enumerate() {
                s += w_ym.get(r, c) * mv;
            }
            y[r] = s;
        }
        (y, c_new)
    }

    #[test]
    fn zero_weights_give_half_gates() {
        let cfg = tiny_config();
        let params = LstmParams::zeros(cfg).unwrap();
        let mut state = LstmState::zeros(&cfg);
        state.c = vec![0.4, -0.2, 1.0, 0.0];
        let trace =
            lstm_step_trace(&params, &[0.0; 3], &state, ActivationChoice::default()).unwrap();
        for r in 0..4 {
            assert_eq!(trace.input_gate[r], 0.5);
            assert_eq!(trace.forget_gate[r], 0.5);
            assert_eq!(trace.output_gate[r], 0.5);
            assert_eq!(trace.cell_input[r], 0.0);
            assert_eq!(trace.cell[r], 0.5 * state.c[r]);
        }
        assert_eq!(trace.output, vec![0.0, 0.0]);
    }

    #[test]
    fn matches_scalar_oracle_over_ten_steps() {
        let cfg = tiny_config();
        let params = random_params(7, cfg);
        let mut rng = StdRng::seed_from_u64(99);
        let mut state = LstmState::zeros(&cfg);
        let mut oc = state.c.clone();
        let mut oy = state.y.clone();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (y, next) = lstm_step(&params, &x, &state, ActivationChoice::default()).unwrap();
            let (ey, ec) = scalar_oracle_step(&params, &x, &oc, &oy, true);
            for (a, b) in y.iter().zip(&ey) {
                assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
            }
            for (a, b) in next.c.iter().zip(&ec) {
                assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
            }
            state = next;
            oc = ec;
            oy = ey;
        }
    }

    #[test]
    fn sigmoid_cell_input_variant_matches_oracle() {
        let cfg = tiny_config();
        let params = random_params(11, cfg);
        let state = LstmState::zeros(&cfg);
        let x = [0.3, -0.8, 0.1];
        let acts = ActivationChoice {
            cell_input: Activation::Sigmoid,
            cell_output: Activation::Tanh,
        };
        let (y, _) = lstm_step(&params, &x, &state, acts).unwrap();
        let (ey, _) = scalar_oracle_step(&params, &x, &state.c, &state.y, false);
        for (a, b) in y.iter().zip(&ey) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn paper_sized_config_shapes() {
        let cfg = LayerConfig {
            input_dim: 153,
            hidden_dim: 1024,
            proj_dim: 512,
            has_peephole: true,
            has_projection: true,
        };
        let params = LstmParams::zeros(cfg).unwrap();
        let state = LstmState::zeros(&cfg);
        let trace =
            lstm_step_trace(&params, &vec![0.0; 153], &state, ActivationChoice::default())
                .unwrap();
        assert_eq!(trace.input_gate.len(), 1024);
        assert_eq!(trace.forget_gate.len(), 1024);
        assert_eq!(trace.cell_input.len(), 1024);
        assert_eq!(trace.cell.len(), 1024);
        assert_eq!(trace.output_gate.len(), 1024);
        assert_eq!(trace.cell_output.len(), 1024);
        assert_eq!(trace.output.len(), 512);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell_delta() {
        // Gates driven hard positive: sigmoid saturates to exactly 1.0 in f64.
        let cfg = tiny_config();
        let mut params = LstmParams::zeros(cfg).unwrap();
        params.b_f = vec![50.0; 4];
        let mut state = LstmState::zeros(&cfg);
        state.c = vec![0.7, -0.3, 0.1, 2.5];
        let trace =
            lstm_step_trace(&params, &[0.0; 3], &state, ActivationChoice::default()).unwrap();
        for r in 0..4 {
            assert_eq!(trace.forget_gate[r], 1.0);
            let delta = trace.cell[r] - state.c[r];
            assert_eq!(delta, trace.cell_input[r] * trace.input_gate[r]);
        }
    }

    #[test]
    fn sequence_empty_and_single() {
        let cfg = tiny_config();
        let params = random_params(3, cfg);
        let state = LstmState::zeros(&cfg);
        let acts = ActivationChoice::default();
        assert!(lstm_sequence(&params, &[], &state, acts).unwrap().is_empty());

        let x = vec![vec![0.1, 0.2, -0.3]];
        let seq = lstm_sequence(&params, &x, &state, acts).unwrap();
        let (y, _) = lstm_step(&params, &x[0], &state, acts).unwrap();
        assert_eq!(seq, vec![y]);
    }

    #[test]
    fn sequence_equals_manual_fold() {
        let cfg = tiny_config();
        let params = random_params(21, cfg);
        let mut rng = StdRng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let initial = LstmState::zeros(&cfg);
        let acts = ActivationChoice::default();
        let seq = lstm_sequence(&params, &xs, &initial, acts).unwrap();

        let mut state = initial;
        for (t, x) in xs.iter().enumerate() {
            let (y, next) = lstm_step(&params, x, &state, acts).unwrap();
            assert_eq!(seq[t], y);
            state = next;
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = tiny_config();
        let params = LstmParams::zeros(cfg).unwrap();
        let state = LstmState::zeros(&cfg);
        let acts = ActivationChoice::default();
        assert!(matches!(
            lstm_step(&params, &[0.0; 2], &state, acts),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            lstm_step(&params, &[0.0, f64::INFINITY, 0.0], &state, acts),
            Err(Error::Numeric(_))
        ));
    }
}
