//! Dynamic-precision fixed-point quantization.
//!
//! Weight formats are chosen per tensor from its dynamic range; matrices
//! stored in the sparse stream share their 16-bit word with a 4-bit index and
//! therefore lose four payload bits relative to dense side parameters.
//! Activation functions run through sampled lookup tables with linear
//! interpolation, and the integer LSTM step mirrors the accelerator datapath
//! bit for bit: 16x12 multiplies, wide accumulation, round-half-away rescales
//! and saturating 16-bit intermediates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{
    read_blob, read_json, write_blob, write_json, BlobReader, BlobWriter, TensorRecord,
};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::{Activation, ActivationChoice, LayerConfig, LstmParams, MATVEC_TENSORS};

/// Signed fixed-point format: `width_bits` total (sign included),
/// `frac_bits` fractional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedFormat {
    pub width_bits: u32,
    pub frac_bits: u32,
}

impl FixedFormat {
    pub fn new(width_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(1..=32).contains(&width_bits) {
            return Err(Error::InvalidArg(format!(
                "width must be in 1..=32, got {width_bits}"
            )));
        }
        if frac_bits > width_bits - 1 {
            return Err(Error::InvalidArg(format!(
                "frac bits {frac_bits} exceed width {width_bits} minus sign"
            )));
        }
        Ok(Self {
            width_bits,
            frac_bits,
        })
    }

    /// Largest storable code.
    pub fn max_code(&self) -> i32 {
        ((1i64 << (self.width_bits - 1)) - 1) as i32
    }

    /// Smallest storable code.
    pub fn min_code(&self) -> i32 {
        (-(1i64 << (self.width_bits - 1))) as i32
    }

    pub fn scale(&self) -> f64 {
        (1i64 << self.frac_bits) as f64
    }

    pub fn to_real(&self, code: i32) -> f64 {
        code as f64 / self.scale()
    }
}

/// LSTM input / recurrent output activation format.
pub const INPUT_FORMAT: FixedFormat = FixedFormat {
    width_bits: 16,
    frac_bits: 11,
};
/// Matrix-product and cell-state intermediate format.
pub const INTERMEDIATE_FORMAT: FixedFormat = FixedFormat {
    width_bits: 16,
    frac_bits: 8,
};
/// Gate outputs from the activation tables.
pub const GATE_FORMAT: FixedFormat = FixedFormat {
    width_bits: 16,
    frac_bits: 15,
};

/// Integer tensor plus the format its codes are expressed in. Vectors are
/// stored as `len x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub rows: usize,
    pub cols: usize,
    pub integers: Vec<i32>,
    pub format: FixedFormat,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> DenseMatrix {
        let values = self
            .integers
            .iter()
            .map(|&q| self.format.to_real(q))
            .collect();
        DenseMatrix::new(self.rows, self.cols, values).expect("finite dequantized values")
    }
}

/// Elementwise min and max of a matrix.
pub fn analyze_range(m: &DenseMatrix) -> Result<(f64, f64)> {
    analyze_range_slice(m.values())
}

pub fn analyze_range_slice(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArg("cannot analyze an empty tensor".into()));
    }
    let mut min = values[0];
    let mut max = values[0];
    for &v in &values[1..] {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
    }
    Ok((min, max))
}

/// Integer bits (sign included) needed to cover `max_abs`.
fn integer_bits(max_abs: f64) -> u32 {
    1 + max_abs.log2().ceil().max(0.0) as u32
}

/// Picks the fixed-point format for a tensor of range `max_abs` at a nominal
/// `width`. Index-carrying tensors (the sparse matrix-vector operands) spend
/// 4 of their word bits on the relative row index, so their payload is
/// `width - 4` bits.
pub fn derive_format(max_abs: f64, width: u32, carries_index: bool) -> Result<FixedFormat> {
    if !(max_abs > 0.0) || !max_abs.is_finite() {
        return Err(Error::InvalidArg(format!(
            "max_abs must be positive and finite, got {max_abs}"
        )));
    }
    if !(1..=32).contains(&width) {
        return Err(Error::InvalidArg(format!(
            "width must be in 1..=32, got {width}"
        )));
    }
    let int_bits = integer_bits(max_abs);
    let payload = if carries_index {
        width.saturating_sub(4)
    } else {
        width
    };
    if int_bits > payload {
        return Err(Error::Overflow(format!(
            "range +-{max_abs} needs {int_bits} integer bits but only {payload} payload bits \
             remain at width {width}{}",
            if carries_index { " with a 4-bit index" } else { "" }
        )));
    }
    FixedFormat::new(width, payload - int_bits)
}

/// Round half away from zero.
#[inline]
pub fn round_half_away_f64(v: f64) -> f64 {
    if v >= 0.0 {
        (v + 0.5).floor()
    } else {
        (v - 0.5).ceil()
    }
}

/// Arithmetic shift right with round-half-away-from-zero.
#[inline]
pub fn shift_round_half_away(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        return v;
    }
    let add = 1i64 << (shift - 1);
    if v >= 0 {
        (v + add) >> shift
    } else {
        -((-v + add) >> shift)
    }
}

/// Clamp a wide value into a format's two's-complement range.
#[inline]
pub fn saturate(v: i64, fmt: FixedFormat) -> i32 {
    v.clamp(fmt.min_code() as i64, fmt.max_code() as i64) as i32
}

/// Moves a raw value from `src_frac` fractional bits into `dst`, rounding
/// half away from zero and saturating.
#[inline]
pub fn requantize(v: i64, src_frac: u32, dst: FixedFormat) -> i32 {
    let shifted = if src_frac >= dst.frac_bits {
        shift_round_half_away(v, src_frac - dst.frac_bits)
    } else {
        v << (dst.frac_bits - src_frac)
    };
    saturate(shifted, dst)
}

fn quantize_value(v: f64, fmt: FixedFormat) -> i32 {
    let scaled = round_half_away_f64(v * fmt.scale());
    if scaled >= fmt.max_code() as f64 {
        fmt.max_code()
    } else if scaled <= fmt.min_code() as f64 {
        fmt.min_code()
    } else {
        scaled as i32
    }
}

/// Linear quantization with round-half-away and saturation.
pub fn quantize_tensor(m: &DenseMatrix, fmt: FixedFormat) -> QuantizedTensor {
    QuantizedTensor {
        rows: m.rows(),
        cols: m.cols(),
        integers: m.values().iter().map(|&v| quantize_value(v, fmt)).collect(),
        format: fmt,
    }
}

pub fn quantize_slice(values: &[f64], fmt: FixedFormat) -> Vec<i32> {
    values.iter().map(|&v| quantize_value(v, fmt)).collect()
}

// ---------------------------------------------------------------------------
// Activation lookup tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LutFunction {
    Sigmoid,
    Tanh,
}

impl LutFunction {
    fn eval_f64(self, x: f64) -> f64 {
        match self {
            LutFunction::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            LutFunction::Tanh => x.tanh(),
        }
    }

    pub fn for_activation(act: Activation) -> Self {
        match act {
            Activation::Sigmoid => LutFunction::Sigmoid,
            Activation::Tanh => LutFunction::Tanh,
        }
    }
}

pub const LUT_POINTS: usize = 2048;
pub const SIGMOID_SAMPLE_RANGE: (f64, f64) = (-64.0, 64.0);
pub const TANH_SAMPLE_RANGE: (f64, f64) = (-128.0, 128.0);
/// Entry saturation bound: outputs live in (-1, 1) at 15 fractional bits.
const LUT_ENTRY_MAX: i64 = (1 << 15) - 1;

/// Sampled activation table; entries are 16-bit with 15 fractional bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActLut {
    pub function: LutFunction,
    pub sample_min: f64,
    pub sample_max: f64,
    pub entries: Vec<i16>,
}

impl ActLut {
    pub fn step(&self) -> f64 {
        (self.sample_max - self.sample_min) / self.entries.len() as f64
    }
}

/// Samples `function` at `n_points` evenly spaced points starting at
/// `sample_min` (the last sample sits one step below `sample_max`).
pub fn build_lut(
    function: LutFunction,
    range: (f64, f64),
    n_points: usize,
) -> Result<ActLut> {
    let (sample_min, sample_max) = range;
    if n_points < 2 {
        return Err(Error::InvalidArg(format!(
            "a lookup table needs at least 2 points, got {n_points}"
        )));
    }
    if !(sample_min.is_finite() && sample_max.is_finite() && sample_min < sample_max) {
        return Err(Error::InvalidArg(format!(
            "invalid sampling range [{sample_min}, {sample_max}]"
        )));
    }
    let step = (sample_max - sample_min) / n_points as f64;
    let entries = (0..n_points)
        .map(|k| {
            let x = sample_min + k as f64 * step;
            let q = round_half_away_f64(function.eval_f64(x) * 32768.0) as i64;
            q.clamp(-LUT_ENTRY_MAX, LUT_ENTRY_MAX) as i16
        })
        .collect();
    Ok(ActLut {
        function,
        sample_min,
        sample_max,
        entries,
    })
}

/// Both default tables at the standard sampling ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActLuts {
    pub sigmoid: ActLut,
    pub tanh: ActLut,
}

impl ActLuts {
    pub fn build_default() -> Self {
        Self {
            sigmoid: build_lut(LutFunction::Sigmoid, SIGMOID_SAMPLE_RANGE, LUT_POINTS)
                .expect("default sigmoid table"),
            tanh: build_lut(LutFunction::Tanh, TANH_SAMPLE_RANGE, LUT_POINTS)
                .expect("default tanh table"),
        }
    }

    pub fn get(&self, function: LutFunction) -> &ActLut {
        match function {
            LutFunction::Sigmoid => &self.sigmoid,
            LutFunction::Tanh => &self.tanh,
        }
    }
}

/// Evaluates a table at a fixed-point input: clamp outside the sampled span,
/// linear interpolation between bracketing entries inside, result rounded
/// half away from zero into the 15-fraction-bit output.
///
/// With the default power-of-two step sizes every f64 operation here is
/// exact, so the result is identical to pure integer interpolation.
pub fn lut_eval(lut: &ActLut, raw: i32, fmt: FixedFormat) -> i16 {
    let n = lut.entries.len();
    let x = raw as f64 / fmt.scale();
    if x <= lut.sample_min {
        return lut.entries[0];
    }
    let pos = (x - lut.sample_min) / lut.step();
    if pos >= (n - 1) as f64 {
        return lut.entries[n - 1];
    }
    let k = pos.floor() as usize;
    let w = pos - k as f64;
    let base = lut.entries[k] as f64;
    let delta = (lut.entries[k + 1] - lut.entries[k]) as f64;
    let y = round_half_away_f64(base + w * delta) as i64;
    y.clamp(-LUT_ENTRY_MAX, LUT_ENTRY_MAX) as i16
}

// ---------------------------------------------------------------------------
// Quantization plan
// ---------------------------------------------------------------------------

/// Format assignment for one tensor, as serialized in plan manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorFormatSpec {
    pub width: u32,
    pub frac: u32,
    pub carries_index: bool,
}

impl TensorFormatSpec {
    pub fn format(&self) -> FixedFormat {
        FixedFormat {
            width_bits: self.width,
            frac_bits: self.frac,
        }
    }
}

/// Per-tensor formats plus the fixed activation formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationPlan {
    pub weight_width: u32,
    pub tensors: BTreeMap<String, TensorFormatSpec>,
    pub input: FixedFormat,
    pub intermediate: FixedFormat,
}

impl QuantizationPlan {
    pub fn tensor_format(&self, name: &str) -> Result<FixedFormat> {
        self.tensors
            .get(name)
            .map(|spec| spec.format())
            .ok_or_else(|| Error::Container(format!("plan has no format for tensor {name}")))
    }
}

fn tensor_slices<'a>(params: &'a LstmParams) -> Vec<(&'static str, &'a [f64], Vec<usize>)> {
    let mut out: Vec<(&'static str, &[f64], Vec<usize>)> = Vec::new();
    for name in MATVEC_TENSORS {
        if let Some(m) = params.matvec_tensor(name) {
            out.push((name, m.values(), vec![m.rows(), m.cols()]));
        }
    }
    if let Some(p) = &params.peephole {
        let h = params.config.hidden_dim;
        out.push(("W_ic", &p.w_ic, vec![h, 1]));
        out.push(("W_fc", &p.w_fc, vec![h, 1]));
        out.push(("W_oc", &p.w_oc, vec![h, 1]));
    }
    let h = params.config.hidden_dim;
    out.push(("b_i", &params.b_i, vec![h, 1]));
    out.push(("b_f", &params.b_f, vec![h, 1]));
    out.push(("b_c", &params.b_c, vec![h, 1]));
    out.push(("b_o", &params.b_o, vec![h, 1]));
    out
}

fn carries_index(name: &str) -> bool {
    MATVEC_TENSORS.contains(&name)
}

/// Analyzes every tensor's range and derives its format at `width` bits.
/// All-zero tensors get the widest fractional format (one integer bit).
pub fn derive_plan(params: &LstmParams, width: u32) -> Result<QuantizationPlan> {
    let mut tensors = BTreeMap::new();
    for (name, values, _) in tensor_slices(params) {
        let (min, max) = analyze_range_slice(values)?;
        let max_abs = min.abs().max(max.abs());
        let ci = carries_index(name);
        let fmt = if max_abs == 0.0 {
            let payload = if ci { width.saturating_sub(4) } else { width };
            if payload < 1 {
                return Err(Error::Overflow(format!(
                    "width {width} leaves no payload bits for {name}"
                )));
            }
            FixedFormat::new(width, payload - 1)?
        } else {
            derive_format(max_abs, width, ci)
                .map_err(|e| match e {
                    Error::Overflow(msg) => Error::Overflow(format!("{name}: {msg}")),
                    other => other,
                })?
        };
        tensors.insert(
            name.to_string(),
            TensorFormatSpec {
                width,
                frac: fmt.frac_bits,
                carries_index: ci,
            },
        );
    }
    Ok(QuantizationPlan {
        weight_width: width,
        tensors,
        input: INPUT_FORMAT,
        intermediate: INTERMEDIATE_FORMAT,
    })
}

// ---------------------------------------------------------------------------
// Quantized parameters and the integer step
// ---------------------------------------------------------------------------

/// One layer's parameters as integer tensors keyed by canonical name.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLstmParams {
    pub config: LayerConfig,
    pub tensors: BTreeMap<String, QuantizedTensor>,
    pub plan: QuantizationPlan,
}

impl QuantizedLstmParams {
    pub fn tensor(&self, name: &str) -> Result<&QuantizedTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Container(format!("quantized model has no tensor {name}")))
    }
}

/// Quantizes all parameters of a layer under a plan.
pub fn quantize_params(params: &LstmParams, plan: &QuantizationPlan) -> Result<QuantizedLstmParams> {
    params.validate()?;
    let mut tensors = BTreeMap::new();
    for (name, values, dims) in tensor_slices(params) {
        let fmt = plan.tensor_format(name)?;
        tensors.insert(
            name.to_string(),
            QuantizedTensor {
                rows: dims[0],
                cols: dims[1],
                integers: quantize_slice(values, fmt),
                format: fmt,
            },
        );
    }
    Ok(QuantizedLstmParams {
        config: params.config,
        tensors,
        plan: plan.clone(),
    })
}

/// A vector of 16-bit codes plus its format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedVector {
    pub raw: Vec<i16>,
    pub format: FixedFormat,
}

impl FixedVector {
    pub fn zeros(len: usize, format: FixedFormat) -> Self {
        Self {
            raw: vec![0; len],
            format,
        }
    }

    pub fn quantize(values: &[f64], format: FixedFormat) -> Self {
        Self {
            raw: values
                .iter()
                .map(|&v| quantize_value(v, format) as i16)
                .collect(),
            format,
        }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.raw
            .iter()
            .map(|&q| self.format.to_real(q as i32))
            .collect()
    }
}

/// Cell state (intermediate format) and recurrent output (input format).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedState {
    pub c: FixedVector,
    pub y: FixedVector,
}

impl QuantizedState {
    pub fn zeros(config: &LayerConfig, plan: &QuantizationPlan) -> Self {
        Self {
            c: FixedVector::zeros(config.hidden_dim, plan.intermediate),
            y: FixedVector::zeros(config.output_dim(), plan.input),
        }
    }
}

/// 16-bit activation times 12-bit weight products accumulated wide, then
/// rescaled into `out_fmt`. The debug assertion is the widening check for the
/// hardware's 32-bit accumulator.
pub fn fixed_matvec(
    w: &QuantizedTensor,
    v: &FixedVector,
    out_fmt: FixedFormat,
) -> Result<FixedVector> {
    if w.cols != v.raw.len() {
        return Err(Error::Shape(format!(
            "fixed matvec: matrix is {}x{} but vector has length {}",
            w.rows,
            w.cols,
            v.raw.len()
        )));
    }
    let src_frac = w.format.frac_bits + v.format.frac_bits;
    let mut out = Vec::with_capacity(w.rows);
    for r in 0..w.rows {
        let row = &w.integers[r * w.cols..(r + 1) * w.cols];
        let mut acc: i64 = 0;
        for (&q, &x) in row.iter().zip(&v.raw) {
            acc += q as i64 * x as i64;
            debug_assert!(
                i32::try_from(acc).is_ok(),
                "accumulator exceeded 32 bits at row {r}"
            );
        }
        out.push(requantize(acc, src_frac, out_fmt) as i16);
    }
    Ok(FixedVector {
        raw: out,
        format: out_fmt,
    })
}

/// Elementwise product of two fixed vectors, rescaled into `out_fmt`.
pub fn fixed_elemmul(a: &FixedVector, b: &FixedVector, out_fmt: FixedFormat) -> Result<FixedVector> {
    if a.raw.len() != b.raw.len() {
        return Err(Error::Shape(format!(
            "elementwise product of lengths {} and {}",
            a.raw.len(),
            b.raw.len()
        )));
    }
    let src_frac = a.format.frac_bits + b.format.frac_bits;
    let raw = a
        .raw
        .iter()
        .zip(&b.raw)
        .map(|(&x, &y)| requantize(x as i64 * y as i64, src_frac, out_fmt) as i16)
        .collect();
    Ok(FixedVector {
        raw,
        format: out_fmt,
    })
}

/// Diagonal (per-element) weight times state vector, rescaled into `out_fmt`.
pub fn fixed_diag_mul(
    w: &QuantizedTensor,
    v: &FixedVector,
    out_fmt: FixedFormat,
) -> Result<FixedVector> {
    if w.integers.len() != v.raw.len() {
        return Err(Error::Shape(format!(
            "diagonal product: weight length {} vs vector length {}",
            w.integers.len(),
            v.raw.len()
        )));
    }
    let src_frac = w.format.frac_bits + v.format.frac_bits;
    let raw = w
        .integers
        .iter()
        .zip(&v.raw)
        .map(|(&q, &x)| requantize(q as i64 * x as i64, src_frac, out_fmt) as i16)
        .collect();
    Ok(FixedVector {
        raw,
        format: out_fmt,
    })
}

/// Aligns a raw bias tensor into `out_fmt` codes.
pub fn align_bias(bias: &QuantizedTensor, out_fmt: FixedFormat) -> Vec<i16> {
    bias.integers
        .iter()
        .map(|&q| requantize(q as i64, bias.format.frac_bits, out_fmt) as i16)
        .collect()
}

/// Sums already-aligned addends in a wide register and saturates once.
pub fn fixed_sum(parts: &[&[i16]], out_fmt: FixedFormat) -> FixedVector {
    let len = parts.first().map_or(0, |p| p.len());
    let mut raw = Vec::with_capacity(len);
    for idx in 0..len {
        let acc: i64 = parts.iter().map(|p| p[idx] as i64).sum();
        raw.push(saturate(acc, out_fmt) as i16);
    }
    FixedVector {
        raw,
        format: out_fmt,
    }
}

/// Saturating elementwise add of two vectors in a shared format.
pub fn fixed_add(a: &FixedVector, b: &FixedVector) -> FixedVector {
    debug_assert_eq!(a.format, b.format);
    fixed_sum(&[&a.raw, &b.raw], a.format)
}

/// Applies a lookup table to every element.
pub fn lut_map(lut: &ActLut, v: &FixedVector) -> FixedVector {
    FixedVector {
        raw: v
            .raw
            .iter()
            .map(|&x| lut_eval(lut, x as i32, v.format))
            .collect(),
        format: GATE_FORMAT,
    }
}

/// One integer LSTM timestep on the quantized datapath.
///
/// Matrix products and the cell state live in the intermediate format, gate
/// outputs in the 15-fraction-bit table format, and the emitted output in
/// the LSTM input format so it can feed back recurrently.
pub fn quantized_lstm_step(
    qp: &QuantizedLstmParams,
    luts: &ActLuts,
    acts: ActivationChoice,
    x_t: &FixedVector,
    state: &QuantizedState,
) -> Result<(FixedVector, QuantizedState)> {
    let cfg = &qp.config;
    if x_t.raw.len() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "input has length {}, expected {}",
            x_t.raw.len(),
            cfg.input_dim
        )));
    }
    if state.c.raw.len() != cfg.hidden_dim || state.y.raw.len() != cfg.output_dim() {
        return Err(Error::Shape("state dims do not match config".into()));
    }
    let mid = qp.plan.intermediate;
    let g_lut = luts.get(LutFunction::for_activation(acts.cell_input));
    let h_lut = luts.get(LutFunction::for_activation(acts.cell_output));

    let gate = |wx: &str, wr: &str, peep: Option<&str>, bias: &str, cell: &FixedVector|
     -> Result<FixedVector> {
        let sx = fixed_matvec(qp.tensor(wx)?, x_t, mid)?;
        let sr = fixed_matvec(qp.tensor(wr)?, &state.y, mid)?;
        let aligned_bias = align_bias(qp.tensor(bias)?, mid);
        let pre = match peep {
            Some(name) if qp.config.has_peephole => {
                let pc = fixed_diag_mul(qp.tensor(name)?, cell, mid)?;
                fixed_sum(&[&sx.raw, &sr.raw, &pc.raw, &aligned_bias], mid)
            }
            _ => fixed_sum(&[&sx.raw, &sr.raw, &aligned_bias], mid),
        };
        Ok(pre)
    };

    let pre_i = gate("W_ix", "W_ir", Some("W_ic"), "b_i", &state.c)?;
    let pre_f = gate("W_fx", "W_fr", Some("W_fc"), "b_f", &state.c)?;
    let pre_g = gate("W_cx", "W_cr", None, "b_c", &state.c)?;

    let i_gate = lut_map(&luts.sigmoid, &pre_i);
    let f_gate = lut_map(&luts.sigmoid, &pre_f);
    let g_vec = lut_map(g_lut, &pre_g);

    let fc = fixed_elemmul(&f_gate, &state.c, mid)?;
    let ig = fixed_elemmul(&i_gate, &g_vec, mid)?;
    let cell = fixed_add(&fc, &ig);

    let pre_o = gate("W_ox", "W_or", Some("W_oc"), "b_o", &cell)?;
    let o_gate = lut_map(&luts.sigmoid, &pre_o);

    let h_c = lut_map(h_lut, &cell);

    let y = if cfg.has_projection {
        let m = fixed_elemmul(&o_gate, &h_c, mid)?;
        fixed_matvec(qp.tensor("W_ym")?, &m, qp.plan.input)?
    } else {
        // Without a projection the cell output is the emitted value; rescale
        // the product straight into the input format in one rounding step.
        fixed_elemmul(&o_gate, &h_c, qp.plan.input)?
    };

    let next = QuantizedState {
        c: cell,
        y: y.clone(),
    };
    Ok((y, next))
}

// ---------------------------------------------------------------------------
// Container formats
// ---------------------------------------------------------------------------

/// Quantized model manifest: the plan rides along with the tensor table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizedManifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub layers: Vec<LayerConfig>,
    pub plans: Vec<QuantizationPlan>,
    pub tensors: Vec<TensorRecord>,
}

pub const QUANTIZED_FORMAT: &str = "lstm-quantized";

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub layers: Vec<QuantizedLstmParams>,
}

pub fn save_quantized(model: &QuantizedModel, path: &Path) -> Result<()> {
    let mut writer = BlobWriter::new();
    for (k, layer) in model.layers.iter().enumerate() {
        for (name, t) in &layer.tensors {
            writer.push_i32(
                &format!("layer{k}.{name}"),
                vec![t.rows, t.cols],
                &t.integers,
            );
        }
    }
    let (blob, tensors) = writer.finish();
    let blob_path = write_blob(path, &blob)?;
    let manifest = QuantizedManifest {
        format: QUANTIZED_FORMAT.to_string(),
        version: 1,
        blob: blob_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned(),
        layers: model.layers.iter().map(|l| l.config).collect(),
        plans: model.layers.iter().map(|l| l.plan.clone()).collect(),
        tensors,
    };
    write_json(path, &manifest)
}

pub fn load_quantized(path: &Path) -> Result<QuantizedModel> {
    let manifest: QuantizedManifest = read_json(path)?;
    if manifest.format != QUANTIZED_FORMAT {
        return Err(Error::Container(format!(
            "expected format {QUANTIZED_FORMAT}, got {}",
            manifest.format
        )));
    }
    if manifest.plans.len() != manifest.layers.len() {
        return Err(Error::Container(
            "manifest must carry one plan per layer".into(),
        ));
    }
    let blob = read_blob(path, &manifest.blob)?;
    let reader = BlobReader::new(&blob, path);
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (k, (cfg, plan)) in manifest.layers.iter().zip(&manifest.plans).enumerate() {
        cfg.validate()?;
        let prefix = format!("layer{k}.");
        let mut tensors = BTreeMap::new();
        for rec in manifest.tensors.iter().filter(|r| r.name.starts_with(&prefix)) {
            let name = rec.name[prefix.len()..].to_string();
            let fmt = plan.tensor_format(&name)?;
            if rec.dims.len() != 2 {
                return Err(Error::Container(format!(
                    "tensor {}: expected two dims, got {:?}",
                    rec.name, rec.dims
                )));
            }
            let integers = reader.read_i32(rec)?;
            if integers.len() != rec.dims[0] * rec.dims[1] {
                return Err(Error::Shape(format!(
                    "tensor {}: blob holds {} values for dims {:?}",
                    rec.name,
                    integers.len(),
                    rec.dims
                )));
            }
            tensors.insert(
                name,
                QuantizedTensor {
                    rows: rec.dims[0],
                    cols: rec.dims[1],
                    integers,
                    format: fmt,
                },
            );
        }
        layers.push(QuantizedLstmParams {
            config: *cfg,
            tensors,
            plan: plan.clone(),
        });
    }
    Ok(QuantizedModel { layers })
}

/// Plan file wrapper (also embedded in the quantized model manifest).
pub fn save_plan(plans: &[QuantizationPlan], path: &Path) -> Result<()> {
    write_json(path, &plans.to_vec())
}

pub fn load_plan(path: &Path) -> Result<Vec<QuantizationPlan>> {
    read_json(path)
}

/// CSV rows `(index, x, entry)` for table inspection.
pub fn lut_to_csv(lut: &ActLut) -> String {
    let mut out = String::from("index,x,entry\n");
    let step = lut.step();
    for (k, &e) in lut.entries.iter().enumerate() {
        let x = lut.sample_min + k as f64 * step;
        out.push_str(&format!("{k},{x},{e}\n"));
    }
    out
}
