use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::prior::{layer_priors, log_sigma_prior};
use super::{bias_view, weight_view, Activation, Dataset, NetworkConfig, ParamVector};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `exp(x)` for `x <= 0`, branch free so slice loops vectorise; within a few ulp of `f64::exp`.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // Adding 1.5 * 2^52 rounds to the nearest integer, which lands in the low mantissa bits.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    // Below this the result is under 1e-304 and indistinguishable from 0 for a sigmoid.
    let x = x.max(-700.0);
    let t = x * std::f64::consts::LOG2_E + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series to r^12 on |r| <= ln2/2.
    let p = 1.0 / 479_001_600.0;
    let p = p * r + 1.0 / 39_916_800.0;
    let p = p * r + 1.0 / 3_628_800.0;
    let p = p * r + 1.0 / 362_880.0;
    let p = p * r + 1.0 / 40_320.0;
    let p = p * r + 1.0 / 5040.0;
    let p = p * r + 1.0 / 720.0;
    let p = p * r + 1.0 / 120.0;
    let p = p * r + 1.0 / 24.0;
    let p = p * r + 1.0 / 6.0;
    let p = p * r + 0.5;
    let p = p * r + 1.0;
    let p = p * r + 1.0;
    p * f64::from_bits(t.to_bits().wrapping_add(1023) << 52)
}

#[inline(always)]
fn sigmoid(a: f64) -> f64 {
    let e = exp_nonpositive(-a.abs());
    let r = 1.0 / (1.0 + e);
    if a >= 0.0 {
        r
    } else {
        e * r
    }
}

#[inline(always)]
fn sigmoid_slice_generic(v: &mut [f64]) {
    v.iter_mut().for_each(|a| *a = sigmoid(*a));
}

// No fused multiply-adds are generated, so both paths give identical bits.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sigmoid_slice_avx2(v: &mut [f64]) {
    sigmoid_slice_generic(v)
}

fn sigmoid_slice(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { sigmoid_slice_avx2(v) };
    }
    sigmoid_slice_generic(v)
}

#[inline(always)]
fn activate(a: &mut Array2<f64>, activation: Activation) {
    match activation {
        Activation::Relu => a.mapv_inplace(|v| v.max(0.0)),
        Activation::Sigmoid => match a.as_slice_mut() {
            Some(v) => sigmoid_slice(v),
            None => a.mapv_inplace(sigmoid),
        },
    }
}

// Below this inner or outer size the packed GEMM kernel loses to plain row loops.
const THIN: usize = 16;

const ROW_BLOCK: usize = 64;

/// `z W^T + b` for `z: n x k`, `W: m x k`.
#[inline(always)]
fn affine_forward(z: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let (n, k) = z.dim();
    let m = w.nrows();
    let b = b.as_slice().expect("bias block is contiguous");
    let mut out = Array2::zeros((n, m));
    let flat = out.as_slice_mut().expect("fresh array is contiguous");
    for row in flat.chunks_exact_mut(m) {
        row.copy_from_slice(b);
    }
    if k > THIN && m > THIN {
        general_mat_mul(1.0, &z, &w.t(), 1.0, &mut out);
        return out;
    }
    let z = z.as_standard_layout();
    let z = z.as_slice().expect("standard layout");
    if k <= THIN {
        // Few inputs: one axpy per input column keeps the long output rows vectorised.
        let wt = w.t().as_standard_layout().into_owned();
        let wt = wt.as_slice().expect("standard layout");
        for (zr, orow) in z.chunks_exact(k).zip(flat.chunks_exact_mut(m)) {
            for (&zv, wc) in zr.iter().zip(wt.chunks_exact(m)) {
                orow.iter_mut().zip(wc).for_each(|(o, wv)| *o += zv * wv);
            }
        }
        return out;
    }
    let w = w.as_slice().expect("weight block is contiguous");
    for (zr, orow) in z.chunks_exact(k).zip(flat.chunks_exact_mut(m)) {
        for (o, wr) in orow.iter_mut().zip(w.chunks_exact(k)) {
            *o += dot(zr, wr);
        }
    }
    out
}

/// Dot product with four independent accumulators.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = (a.chunks_exact(4), a.chunks_exact(4).remainder());
    let (bc, br) = (b.chunks_exact(4), b.chunks_exact(4).remainder());
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `grad += delta^T z` for `delta: n x m`, `z: n x k`, into a row-major `m x k` block.
#[inline(always)]
fn accumulate_weight_grad(grad: &mut [f64], delta: &Array2<f64>, z: &Array2<f64>) {
    let (m, k) = (delta.ncols(), z.ncols());
    if m > THIN && k > THIN {
        let mut g = ArrayViewMut2::from_shape((m, k), grad).expect("block shape");
        general_mat_mul(1.0, &delta.t(), z, 1.0, &mut g);
        return;
    }
    let d = delta.as_slice().expect("delta is contiguous");
    let z = z.as_slice().expect("activations are contiguous");
    for (dr, zr) in d.chunks_exact(m).zip(z.chunks_exact(k)) {
        for (gi, &dv) in grad.chunks_exact_mut(k).zip(dr) {
            if dv != 0.0 {
                gi.iter_mut().zip(zr).for_each(|(g, zv)| *g += dv * zv);
            }
        }
    }
}

/// `delta W` for `delta: n x m`, `W: m x k`.
#[inline(always)]
fn backprop_through(delta: &Array2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = delta.dim();
    let k = w.ncols();
    let mut out = Array2::zeros((n, k));
    if m > THIN && k > THIN {
        general_mat_mul(1.0, delta, &w, 0.0, &mut out);
        return out;
    }
    let w = w.as_slice().expect("weight block is contiguous");
    let d = delta.as_slice().expect("delta is contiguous");
    let flat = out.as_slice_mut().expect("fresh array is contiguous");
    for (dr, orow) in d.chunks_exact(m).zip(flat.chunks_exact_mut(k)) {
        for (&dv, wr) in dr.iter().zip(w.chunks_exact(k)) {
            if dv != 0.0 {
                orow.iter_mut().zip(wr).for_each(|(o, wv)| *o += dv * wv);
            }
        }
    }
    out
}

/// Runs the network and keeps every post-activation `z_0..=z_L`, followed by the output.
#[inline(always)]
fn forward_trace(config: &NetworkConfig, values: &[f64], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let layout = config.layout();
    let slots = layout.layers();
    let mut trace = Vec::with_capacity(slots.len() + 1);
    trace.push(x.as_standard_layout().into_owned());
    for (l, slot) in slots.iter().enumerate() {
        let w = weight_view(values, slot);
        let b = bias_view(values, slot);
        let mut a = affine_forward(trace[l].view(), w, b);
        if l + 1 < slots.len() {
            activate(&mut a, config.activation);
        }
        trace.push(a);
    }
    trace
}

pub(crate) fn check_input(config: &NetworkConfig, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != config.input_dim {
        return Err(Error::DimensionMismatch {
            layer: "input layer (layer 1 fan-in)".into(),
            expected: config.input_dim,
            got: x.ncols(),
        });
    }
    Ok(())
}

fn check_params(config: &NetworkConfig, values: &[f64]) -> Result<()> {
    let expected = config.param_count();
    if values.len() != expected {
        return Err(Error::DimensionMismatch {
            layer: "parameter vector".into(),
            expected,
            got: values.len(),
        });
    }
    Ok(())
}

/// Noiseless signal `b_{L+1} + W_{L+1} z_L` for each row of `x`.
pub fn forward(config: &NetworkConfig, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
    forward_values(config, &params.values, x.view())
}

pub(crate) fn forward_values(
    config: &NetworkConfig,
    values: &[f64],
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_params(config, values)?;
    check_input(config, x)?;
    Ok(forward_trace(config, values, x).pop().expect("trace has an output"))
}

pub fn log_prior(config: &NetworkConfig, params: &ParamVector) -> Result<f64> {
    check_params(config, &params.values)?;
    Ok(prior_terms(config, &params.values, None))
}

fn prior_terms(config: &NetworkConfig, values: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let layout = config.layout();
    let mut total = 0.0;
    for (slot, prior) in layout.layers().iter().zip(layer_priors(config)) {
        let wr = slot.weight_range();
        let br = slot.bias_range();
        total += prior
            .weight
            .accumulate(&values[wr.clone()], grad.as_deref_mut().map(|g| &mut g[wr]));
        total += prior
            .bias
            .accumulate(&values[br.clone()], grad.as_deref_mut().map(|g| &mut g[br]));
    }
    let s_idx = layout.log_sigma_index();
    let (lp, dlp) = log_sigma_prior(values[s_idx], config.noise_prior_scale_sq);
    if let Some(g) = grad {
        g[s_idx] += dlp;
    }
    total + lp
}

/// `sum_n log N(y_n | mu(x_n), sigma^2)` with one shared sigma across output dimensions.
pub fn log_likelihood(config: &NetworkConfig, params: &ParamVector, data: &Dataset) -> Result<f64> {
    check_params(config, &params.values)?;
    data.check_dims(config)?;
    let mu = forward_trace(config, &params.values, data.x.view())
        .pop()
        .expect("trace has an output");
    let value = gaussian_log_lik(&mu, &data.y, params.log_sigma());
    if !value.is_finite() {
        return Err(Error::non_finite("log-likelihood"));
    }
    Ok(value)
}

fn gaussian_log_lik(mu: &Array2<f64>, y: &Array2<f64>, log_sigma: f64) -> f64 {
    let count = mu.len() as f64;
    let mut rss = 0.0;
    Zip::from(mu).and(y).for_each(|&m, &t| rss += (t - m) * (t - m));
    -0.5 * count * LN_2PI - count * log_sigma - 0.5 * rss * (-2.0 * log_sigma).exp()
}

pub fn log_posterior(config: &NetworkConfig, params: &ParamVector, data: &Dataset) -> Result<f64> {
    Ok(log_prior(config, params)? + log_likelihood(config, params, data)?)
}

/// Gradient of [`log_posterior`] with respect to the unconstrained parameters.
pub fn grad_log_posterior(
    config: &NetworkConfig,
    params: &ParamVector,
    data: &Dataset,
) -> Result<ParamVector> {
    let mut grad = vec![0.0; params.len()];
    value_and_grad(config, &params.values, Some(data), &mut grad)?;
    Ok(ParamVector { values: grad })
}

/// Log posterior (or log prior when `data` is `None`) and its gradient, written into `grad`.
pub(crate) fn value_and_grad(
    config: &NetworkConfig,
    values: &[f64],
    data: Option<&Dataset>,
    grad: &mut [f64],
) -> Result<f64> {
    check_params(config, values)?;
    if grad.len() != values.len() {
        return Err(Error::DimensionMismatch {
            layer: "gradient buffer".into(),
            expected: values.len(),
            got: grad.len(),
        });
    }
    grad.fill(0.0);
    let mut total = prior_terms(config, values, Some(grad));

    if let Some(data) = data {
        data.check_dims(config)?;
        let layout = config.layout();
        let s_idx = layout.log_sigma_index();
        let log_sigma = values[s_idx];
        let inv_var = (-2.0 * log_sigma).exp();

        let count = data.y.len() as f64;
        let rss = likelihood_pass(config, values, data, inv_var, grad);
        total += -0.5 * count * LN_2PI - count * log_sigma - 0.5 * rss * inv_var;
        grad[s_idx] += -count + rss * inv_var;
    }

    if !total.is_finite() {
        return Err(Error::non_finite("log posterior"));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(total)
}

/// Per-row Gaussian log-likelihood for one parameter vector.
/// Residual sum of squares over `data`; adds the likelihood gradient (without the
/// `log_sigma` term) into `grad`.
#[inline(always)]
fn likelihood_pass_generic(
    config: &NetworkConfig,
    values: &[f64],
    data: &Dataset,
    inv_var: f64,
    grad: &mut [f64],
) -> f64 {
    let layout = config.layout();
    let slots = layout.layers();
    let n = data.x.nrows();
    let mut rss = 0.0;
    // Row blocks keep the wide intermediates cache resident.
    for start in (0..n).step_by(ROW_BLOCK) {
        let rows = start..(start + ROW_BLOCK).min(n);
        let mut trace = forward_trace(config, values, data.x.slice(s![rows.clone(), ..]));
        let mu = trace.pop().expect("trace has an output");

        // delta = d loglik / d mu
        let mut delta = &data.y.slice(s![rows, ..]) - &mu;
        rss += delta.iter().map(|r| r * r).sum::<f64>();
        delta *= inv_var;

        for (l, slot) in slots.iter().enumerate().rev() {
            let z_in = &trace[l];
            accumulate_weight_grad(&mut grad[slot.weight_range()], &delta, z_in);
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grad[slot.bias_range()].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            if l == 0 {
                break;
            }
            let mut dz = backprop_through(&delta, weight_view(values, slot));
            match config.activation {
                // z > 0 exactly when the pre-activation is positive; the subgradient at 0 is 0.
                Activation::Relu => Zip::from(&mut dz).and(z_in).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }),
                Activation::Sigmoid => {
                    Zip::from(&mut dz).and(z_in).for_each(|d, &z| *d *= z * (1.0 - z))
                }
            }
            delta = dz;
        }
    }
    rss
}

/// One hidden layer with few inputs and outputs: a fused per-row pass whose hidden
/// buffers stay in L1, instead of materialising block-sized intermediates.
#[inline(always)]
fn shallow_pass_generic(
    config: &NetworkConfig,
    values: &[f64],
    data: &Dataset,
    inv_var: f64,
    grad: &mut [f64],
) -> f64 {
    let layout = config.layout();
    let (hidden, out) = (&layout.layers()[0], &layout.layers()[1]);
    let (k, m, o) = (config.input_dim, config.hidden_widths[0], config.output_dim);
    let w1 = &values[hidden.weight_range()];
    let b1 = &values[hidden.bias_range()];
    let w2 = &values[out.weight_range()];
    let b2 = &values[out.bias_range()];
    // column c of W1 as a contiguous run of m values
    let mut w1t = vec![0.0; k * m];
    for j in 0..m {
        for c in 0..k {
            w1t[c * m + j] = w1[j * k + c];
        }
    }
    let mut g1t = vec![0.0; k * m];
    let mut gb1 = vec![0.0; m];
    let mut gw2 = vec![0.0; o * m];
    let mut gb2 = vec![0.0; o];
    let mut h = vec![0.0; m];
    let mut dz = vec![0.0; m];
    let mut d = vec![0.0; o];

    let x = data.x.as_standard_layout();
    let y = data.y.as_standard_layout();
    let x = x.as_slice().expect("standard layout");
    let y = y.as_slice().expect("standard layout");
    let mut rss = 0.0;
    for (xr, yr) in x.chunks_exact(k).zip(y.chunks_exact(o)) {
        h.copy_from_slice(b1);
        for (&xv, wc) in xr.iter().zip(w1t.chunks_exact(m)) {
            h.iter_mut().zip(wc).for_each(|(a, w)| *a += xv * w);
        }
        match config.activation {
            Activation::Relu => h.iter_mut().for_each(|a| *a = a.max(0.0)),
            Activation::Sigmoid => h.iter_mut().for_each(|a| *a = sigmoid(*a)),
        }
        for q in 0..o {
            let r = yr[q] - (b2[q] + dot(&w2[q * m..(q + 1) * m], &h));
            rss += r * r;
            d[q] = r * inv_var;
            gb2[q] += d[q];
            let dq = d[q];
            gw2[q * m..(q + 1) * m].iter_mut().zip(&h).for_each(|(g, hv)| *g += dq * hv);
        }
        dz.fill(0.0);
        for (&dq, wr) in d.iter().zip(w2.chunks_exact(m)) {
            dz.iter_mut().zip(wr).for_each(|(a, w)| *a += dq * w);
        }
        match config.activation {
            // same subgradient convention as the layered pass
            Activation::Relu => dz.iter_mut().zip(&h).for_each(|(a, &z)| {
                if z <= 0.0 {
                    *a = 0.0;
                }
            }),
            Activation::Sigmoid => dz.iter_mut().zip(&h).for_each(|(a, &z)| *a *= z * (1.0 - z)),
        }
        gb1.iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
        for (&xv, gc) in xr.iter().zip(g1t.chunks_exact_mut(m)) {
            gc.iter_mut().zip(&dz).for_each(|(g, v)| *g += xv * v);
        }
    }

    let gw1 = &mut grad[hidden.weight_range()];
    for j in 0..m {
        for c in 0..k {
            gw1[j * k + c] += g1t[c * m + j];
        }
    }
    add_into(&mut grad[hidden.bias_range()], &gb1);
    add_into(&mut grad[out.weight_range()], &gw2);
    add_into(&mut grad[out.bias_range()], &gb2);
    rss
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn is_shallow(config: &NetworkConfig) -> bool {
    config.hidden_widths.len() == 1 && config.input_dim <= THIN && config.output_dim <= THIN
}

#[inline(always)]
fn likelihood_pass_dispatch(
    config: &NetworkConfig,
    values: &[f64],
    data: &Dataset,
    inv_var: f64,
    grad: &mut [f64],
) -> f64 {
    if is_shallow(config) {
        shallow_pass_generic(config, values, data, inv_var, grad)
    } else {
        likelihood_pass_generic(config, values, data, inv_var, grad)
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn likelihood_pass_avx2(
    config: &NetworkConfig,
    values: &[f64],
    data: &Dataset,
    inv_var: f64,
    grad: &mut [f64],
) -> f64 {
    likelihood_pass_dispatch(config, values, data, inv_var, grad)
}

fn likelihood_pass(config: &NetworkConfig, values: &[f64], data: &Dataset, inv_var: f64, grad: &mut [f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { likelihood_pass_avx2(config, values, data, inv_var, grad) };
    }
    likelihood_pass_dispatch(config, values, data, inv_var, grad)
}

pub(crate) fn pointwise_log_lik_values(
    config: &NetworkConfig,
    values: &[f64],
    data: &Dataset,
) -> Result<Vec<f64>> {
    data.check_dims(config)?;
    let mu = forward_values(config, values, data.x.view())?;
    let log_sigma = values[values.len() - 1];
    let inv_var = (-2.0 * log_sigma).exp();
    let dout = mu.ncols() as f64;
    Ok(mu
        .outer_iter()
        .zip(data.y.outer_iter())
        .map(|(m, t)| {
            let rss: f64 = m.iter().zip(t.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
            -0.5 * dout * LN_2PI - dout * log_sigma - 0.5 * rss * inv_var
        })
        .collect())
}
