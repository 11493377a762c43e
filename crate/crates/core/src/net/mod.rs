//! Fully-connected network with per-forward-pass dropout masks.
//!
//! A network with weight layers `W_0..W_{L-1}` (shape `d_i x d_{i+1}`,
//! row-major) computes, per MC sample `k`:
//!
//! ```text
//! a_0 = x
//! z_i = (a_i ⊙ m_{k,i}) W_i + b_i
//! a_{i+1} = act_i(z_i)        (output layer is linear)
//! ```
//!
//! where `m_{k,i}` is a Bernoulli(1 - dropout_rate_i) mask over the layer's
//! input units, drawn fresh per (batch row, sample, layer). The masked
//! weights `diag(m) W` are themselves the posterior sample: there is no
//! inverted-dropout rescaling at train time and no weight averaging at test
//! time. Biases are point estimates and are never masked.
//!
//! Gradients are hand-derived layer by layer; there is no autodiff graph.

use crate::numerics::{parallel, sample_bernoulli_mask, RngStream, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the pre-activation (relu'(0) taken as 0).
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths, hidden activations and per-layer dropout rates.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpArchitecture {
    layer_widths: Vec<usize>,
    hidden_activations: Vec<Activation>,
    dropout_rates: Vec<f64>,
}

impl MlpArchitecture {
    /// `layer_widths = [d_in, h_1, ..., d_out]`; one activation per hidden
    /// layer; one dropout rate per weight layer, applied to that layer's
    /// input units. Rates must lie in `[0, 1)`.
    pub fn new(
        layer_widths: Vec<usize>,
        hidden_activations: Vec<Activation>,
        dropout_rates: Vec<f64>,
    ) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidParameter(
                "need at least one weight layer".into(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        let n_layers = layer_widths.len() - 1;
        if hidden_activations.len() != n_layers - 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {} hidden activations, got {}",
                n_layers - 1,
                hidden_activations.len()
            )));
        }
        if dropout_rates.len() != n_layers {
            return Err(Error::InvalidParameter(format!(
                "expected {} dropout rates, got {}",
                n_layers,
                dropout_rates.len()
            )));
        }
        if dropout_rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidParameter(
                "dropout rates must lie in [0, 1)".into(),
            ));
        }
        Ok(MlpArchitecture {
            layer_widths,
            hidden_activations,
            dropout_rates,
        })
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn n_weight_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.dropout_rates
    }

    pub fn hidden_activations(&self) -> &[Activation] {
        &self.hidden_activations
    }

    /// Activation applied to the output of weight layer `i`.
    fn activation_after(&self, i: usize) -> Activation {
        if i + 1 < self.n_weight_layers() {
            self.hidden_activations[i]
        } else {
            Activation::Identity
        }
    }

    /// Architecture with every dropout rate forced to zero (the
    /// deterministic maximum-likelihood baseline).
    pub fn without_dropout(&self) -> MlpArchitecture {
        MlpArchitecture {
            layer_widths: self.layer_widths.clone(),
            hidden_activations: self.hidden_activations.clone(),
            dropout_rates: vec![0.0; self.dropout_rates.len()],
        }
    }
}

/// Variational parameters: weight matrices and point-estimate biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl ParameterSet {
    /// Gaussian init with stddev 1/sqrt(fan-in); biases zero.
    pub fn init_gaussian(arch: &MlpArchitecture, rng: &mut RngStream) -> Result<ParameterSet> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..arch.n_weight_layers() {
            let (d_in, d_out) = (arch.layer_widths[i], arch.layer_widths[i + 1]);
            let std = 1.0 / (d_in as f64).sqrt();
            weights.push(crate::numerics::sample_gaussian(rng, 0.0, std, &[d_in, d_out])?);
            biases.push(Tensor::zeros(vec![d_out]));
        }
        Ok(ParameterSet { weights, biases })
    }

    pub fn zeros(arch: &MlpArchitecture) -> ParameterSet {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..arch.n_weight_layers() {
            weights.push(Tensor::zeros(vec![arch.layer_widths[i], arch.layer_widths[i + 1]]));
            biases.push(Tensor::zeros(vec![arch.layer_widths[i + 1]]));
        }
        ParameterSet { weights, biases }
    }

    pub fn from_parts(weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<ParameterSet> {
        if weights.len() != biases.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight matrices vs {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        for (w, b) in weights.iter().zip(&biases) {
            let (_, d_out) = w.dims2()?;
            if b.shape() != [d_out] {
                return Err(Error::ShapeMismatch(format!(
                    "bias {:?} does not match weight {:?}",
                    b.shape(),
                    w.shape()
                )));
            }
        }
        Ok(ParameterSet { weights, biases })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn matches(&self, arch: &MlpArchitecture) -> bool {
        self.weights.len() == arch.n_weight_layers()
            && self.weights.iter().enumerate().all(|(i, w)| {
                w.shape() == [arch.layer_widths[i], arch.layer_widths[i + 1]]
            })
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>()
            + self.biases.iter().map(Tensor::len).sum::<usize>()
    }

    /// Flatten in layer order, weights before bias within a layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    /// Overwrite every weight and bias from a flat slice laid out as in
    /// [`ParameterSet::flatten`].
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for i in 0..self.weights.len() {
            let wl = self.weights[i].len();
            self.weights[i].data_mut().copy_from_slice(&flat[offset..offset + wl]);
            offset += wl;
            let bl = self.biases[i].len();
            self.biases[i].data_mut().copy_from_slice(&flat[offset..offset + bl]);
            offset += bl;
        }
        Ok(())
    }

    pub fn from_flat(arch: &MlpArchitecture, flat: &[f64]) -> Result<ParameterSet> {
        let mut params = ParameterSet::zeros(arch);
        let n = params.param_count();
        if flat.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for i in 0..params.weights.len() {
            let wl = params.weights[i].len();
            params.weights[i].data_mut().copy_from_slice(&flat[offset..offset + wl]);
            offset += wl;
            let bl = params.biases[i].len();
            params.biases[i].data_mut().copy_from_slice(&flat[offset..offset + bl]);
            offset += bl;
        }
        Ok(params)
    }

    /// `self += scale * other` over every weight and bias.
    pub fn axpy(&mut self, scale: f64, other: &ParameterSet) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::ShapeMismatch("parameter set layer counts differ".into()));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.axpy(scale, b)?;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.axpy(scale, b)?;
        }
        Ok(())
    }

    pub fn weight_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.weights[i]
    }

    pub fn bias_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.biases[i]
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// One Bernoulli mask collection per MC sample: `masks[k][layer]` has shape
/// `(batch, layer_input_dim)`.
#[derive(Debug, Clone)]
pub struct MaskSet {
    masks: Vec<Vec<Tensor>>,
    batch: usize,
}

impl MaskSet {
    pub fn k(&self) -> usize {
        self.masks.len()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn layer(&self, k: usize, layer: usize) -> &Tensor {
        &self.masks[k][layer]
    }

    /// Build from explicit {0,1} tensors (tests and mask-enumeration oracles).
    pub fn from_tensors(masks: Vec<Vec<Tensor>>, batch: usize) -> MaskSet {
        MaskSet { masks, batch }
    }
}

/// Draw masks in the fixed order (sample k, layer, row-major unit). Every
/// layer consumes `batch * d_layer` draws regardless of its rate, so the
/// draw budget depends only on shapes.
pub fn sample_masks(
    arch: &MlpArchitecture,
    batch: usize,
    k: usize,
    rng: &mut RngStream,
) -> Result<MaskSet> {
    let mut masks = Vec::with_capacity(k);
    for _ in 0..k {
        let mut per_layer = Vec::with_capacity(arch.n_weight_layers());
        for (i, &rate) in arch.dropout_rates.iter().enumerate() {
            let d = arch.layer_widths[i];
            per_layer.push(sample_bernoulli_mask(rng, 1.0 - rate, &[batch, d])?);
        }
        masks.push(per_layer);
    }
    Ok(MaskSet { masks, batch })
}

/// Per-sample, per-layer tensors retained for backprop. Replaying the
/// forward pass from the same inputs and masks reproduces it exactly.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    masked_inputs: Vec<Vec<Tensor>>, // [k][layer] (batch, d_layer)
    preacts: Vec<Vec<Tensor>>,       // [k][layer] (batch, d_{layer+1})
    batch: usize,
}

impl ForwardRecord {
    pub fn k(&self) -> usize {
        self.masked_inputs.len()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Smallest |pre-activation| over every sample and layer. Gradient
    /// checks reject draws where this sits within the finite-difference
    /// step of a ReLU kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.preacts
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .fold(f64::INFINITY, |acc, &v| acc.min(v.abs()))
    }
}

fn forward_one_sample(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &Tensor,
    masks_k: &[Tensor],
) -> Result<(Tensor, Vec<Tensor>, Vec<Tensor>)> {
    let n_layers = arch.n_weight_layers();
    let mut masked_inputs = Vec::with_capacity(n_layers);
    let mut preacts = Vec::with_capacity(n_layers);
    let mut activation = x.clone();
    for i in 0..n_layers {
        let masked = activation.hadamard(&masks_k[i])?;
        let mut pre = masked.matmul(&params.weights[i])?;
        let (rows, cols) = pre.dims2()?;
        let bias = params.biases[i].data();
        for r in 0..rows {
            for c in 0..cols {
                *pre.at2_mut(r, c) += bias[c];
            }
        }
        let act = arch.activation_after(i);
        activation = pre.map(|v| act.apply(v));
        masked_inputs.push(masked);
        preacts.push(pre);
    }
    Ok((activation, masked_inputs, preacts))
}

/// K-sample stochastic forward pass.
///
/// Output slice `[n, k, :]` is the network applied to row `n` of `x` under
/// mask collection `k`. Masks are drawn here, before any compute, in the
/// documented order, so results do not depend on `threads`.
pub fn forward_stochastic(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &Tensor,
    k: usize,
    rng: &mut RngStream,
    threads: usize,
) -> Result<(Tensor, MaskSet, ForwardRecord)> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    let (batch, _) = x.dims2()?;
    let masks = sample_masks(arch, batch, k, rng)?;
    let (logits, record) = forward_with_masks(params, arch, x, &masks, threads)?;
    Ok((logits, masks, record))
}

/// Deterministic forward pass under fixed masks.
pub fn forward_with_masks(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &Tensor,
    masks: &MaskSet,
    threads: usize,
) -> Result<(Tensor, ForwardRecord)> {
    let (batch, d_in) = x.dims2()?;
    if d_in != arch.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input dim {d_in} vs architecture {}",
            arch.input_dim()
        )));
    }
    if !params.matches(arch) {
        return Err(Error::ShapeMismatch("parameters do not match architecture".into()));
    }
    if masks.batch() != batch {
        return Err(Error::ShapeMismatch(format!(
            "mask batch {} vs input batch {batch}",
            masks.batch()
        )));
    }
    let k = masks.k();
    let c = arch.output_dim();
    let per_k = parallel::run_indexed(k, threads, |ki| {
        forward_one_sample(params, arch, x, &masks.masks[ki])
    });
    let mut logits = Tensor::zeros(vec![batch, k, c]);
    let mut masked_inputs = Vec::with_capacity(k);
    let mut preacts = Vec::with_capacity(k);
    for (ki, result) in per_k.into_iter().enumerate() {
        let (out, masked, pre) = result?;
        for n in 0..batch {
            for j in 0..c {
                *logits.at3_mut(n, ki, j) = out.at2(n, j);
            }
        }
        masked_inputs.push(masked);
        preacts.push(pre);
    }
    Ok((logits, ForwardRecord { masked_inputs, preacts, batch }))
}

fn backward_one_sample(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    masked_inputs: &[Tensor],
    preacts: &[Tensor],
    masks_k: &[Tensor],
    upstream_k: &Tensor, // (batch, d_out) = dLoss/dlogits for this sample
    want_input: bool,
) -> Result<(ParameterSet, Option<Tensor>)> {
    let n_layers = arch.n_weight_layers();
    let mut grads = ParameterSet::zeros(arch);
    let mut input_grad = None;
    let mut dz = upstream_k.clone();
    for i in (0..n_layers).rev() {
        // dW_i = masked_input^T dz, db_i = column sums of dz.
        let gw = masked_inputs[i].transposed()?.matmul(&dz)?;
        grads.weights[i].axpy(1.0, &gw)?;
        let (rows, cols) = dz.dims2()?;
        for r in 0..rows {
            for c in 0..cols {
                grads.biases[i].data_mut()[c] += dz.at2(r, c);
            }
        }
        if i > 0 || want_input {
            let da = dz.matmul(&params.weights[i].transposed()?)?.hadamard(&masks_k[i])?;
            if i > 0 {
                let act = arch.activation_after(i - 1);
                let pre = &preacts[i - 1];
                let mut next = da;
                for (v, &p) in next.data_mut().iter_mut().zip(pre.data()) {
                    *v *= act.derivative(p);
                }
                dz = next;
            } else {
                input_grad = Some(da);
            }
        }
    }
    Ok((grads, input_grad))
}

fn check_record(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    record: &ForwardRecord,
    masks: &MaskSet,
    upstream: &Tensor,
) -> Result<(usize, usize)> {
    let (batch, k, c) = upstream.dims3()?;
    if c != arch.output_dim() || !params.matches(arch) {
        return Err(Error::ShapeMismatch("upstream does not match architecture".into()));
    }
    if record.batch != batch || record.k() != k || masks.k() != k || masks.batch() != batch {
        return Err(Error::ShapeMismatch(
            "stale forward record: batch/sample counts drifted".into(),
        ));
    }
    for ki in 0..k {
        for i in 0..arch.n_weight_layers() {
            if record.masked_inputs[ki][i].shape() != [batch, arch.layer_widths[i]]
                || record.preacts[ki][i].shape() != [batch, arch.layer_widths[i + 1]]
            {
                return Err(Error::ShapeMismatch(
                    "stale forward record: layer shapes drifted".into(),
                ));
            }
        }
    }
    Ok((batch, k))
}

/// Gradient of a scalar loss w.r.t. every weight and bias, summed over the
/// batch and the K samples. `upstream` is dLoss/dlogits, shape (M, K, C).
///
/// Per-sample gradients are reduced in ascending k order, so the result is
/// independent of `threads`.
pub fn backward_params(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    record: &ForwardRecord,
    masks: &MaskSet,
    upstream: &Tensor,
    threads: usize,
) -> Result<ParameterSet> {
    let (batch, k) = check_record(params, arch, record, masks, upstream)?;
    let c = arch.output_dim();
    let per_k = parallel::run_indexed(k, threads, |ki| {
        let mut upstream_k = Tensor::zeros(vec![batch, c]);
        for n in 0..batch {
            for j in 0..c {
                *upstream_k.at2_mut(n, j) = upstream.at3(n, ki, j);
            }
        }
        backward_one_sample(
            params,
            arch,
            &record.masked_inputs[ki],
            &record.preacts[ki],
            &masks.masks[ki],
            &upstream_k,
            false,
        )
    });
    let mut total = ParameterSet::zeros(arch);
    for result in per_k {
        let (g, _) = result?;
        total.axpy(1.0, &g)?;
    }
    Ok(total)
}

/// Exact gradient of a scalar objective w.r.t. a single input, under fixed
/// masks. `upstream` is dObjective/dlogits with shape (1, K, C); the result
/// sums contributions over the K samples.
pub fn input_gradient(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &[f64],
    masks: &MaskSet,
    upstream: &Tensor,
) -> Result<Vec<f64>> {
    let x_t = Tensor::from_vec(vec![1, x.len()], x.to_vec())?;
    let (_, record) = forward_with_masks(params, arch, &x_t, masks, 1)?;
    let (_, k) = check_record(params, arch, &record, masks, upstream)?;
    let c = arch.output_dim();
    let mut grad = vec![0.0; x.len()];
    for ki in 0..k {
        let mut upstream_k = Tensor::zeros(vec![1, c]);
        for j in 0..c {
            *upstream_k.at2_mut(0, j) = upstream.at3(0, ki, j);
        }
        let (_, ig) = backward_one_sample(
            params,
            arch,
            &record.masked_inputs[ki],
            &record.preacts[ki],
            &masks.masks[ki],
            &upstream_k,
            true,
        )?;
        let ig = ig.expect("input gradient requested");
        for (g, &v) in grad.iter_mut().zip(ig.data()) {
            *g += v;
        }
    }
    Ok(grad)
}
