//! Sinusoidal coordinate networks with exact input derivatives.
//!
//! A network with `n_layers` linear layers maps `in_dim` coordinates to
//! `out_dim` outputs:
//!
//! ```text
//! h_0 = x
//! h_k = sin(omega0 * (W_k h_{k-1} + b_k))      k = 1 .. n_layers-1
//! y   = W_L h_{L-1} + b_L                      (linear output)
//! ```
//!
//! The input Jacobian `dy/dx` is carried alongside the activations in
//! forward mode (each sine layer turns into a cosine-scaled affine chain), so
//! a loss may depend on both `y` and `dy/dx`. [`SirenTape::backward`] then
//! runs reverse mode over that augmented computation, which gives exact
//! parameter gradients for residuals such as divergence or transport terms.

use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

/// Standard Siren frequency scale.
pub const DEFAULT_OMEGA0: f64 = 30.0;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SIRN";
const CHECKPOINT_VERSION: u32 = 1;

/// All weights and biases of one sinusoidal network.
///
/// Parameters live in one flat buffer; layer `k` stores its row-major
/// `out x in` weight matrix followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SirenParams {
    dims: Vec<usize>,
    omega0: f64,
    data: Vec<f64>,
}

/// Borrowed view of one linear layer.
#[derive(Clone, Copy, Debug)]
pub struct Layer<'a> {
    pub weights: &'a [f64],
    pub biases: &'a [f64],
    pub n_in: usize,
    pub n_out: usize,
}

fn layer_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut acc = 0;
    offsets.push(0);
    for pair in dims.windows(2) {
        acc += pair[0] * pair[1] + pair[1];
        offsets.push(acc);
    }
    offsets
}

impl SirenParams {
    /// A network with every parameter set to zero.
    pub fn zeros(dims: &[usize], omega0: f64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "a network needs at least one linear layer".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("layer widths must be positive: {dims:?}")));
        }
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(Error::Config(format!("omega0 must be positive, got {omega0}")));
        }
        let len = *layer_offsets(dims).last().unwrap();
        Ok(Self {
            dims: dims.to_vec(),
            omega0,
            data: vec![0.0; len],
        })
    }

    /// Wraps an existing flat buffer; its length must match `dims`.
    pub fn from_raw(dims: &[usize], omega0: f64, data: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(dims, omega0)?;
        if data.len() != params.data.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters for dims {dims:?}, got {}",
                params.data.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite network parameter".into()));
        }
        params.data = data;
        Ok(params)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Number of linear layers.
    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Width of the widest layer, inputs included.
    pub fn max_width(&self) -> usize {
        *self.dims.iter().max().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layer(&self, k: usize) -> Layer<'_> {
        let (n_in, n_out) = (self.dims[k], self.dims[k + 1]);
        let start = layer_offsets(&self.dims)[k];
        let (weights, rest) = self.data[start..].split_at(n_in * n_out);
        Layer {
            weights,
            biases: &rest[..n_out],
            n_in,
            n_out,
        }
    }

    /// Mutable `(weights, biases)` of layer `k`.
    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.dims[k], self.dims[k + 1]);
        let start = layer_offsets(&self.dims)[k];
        let (weights, rest) = self.data[start..].split_at_mut(n_in * n_out);
        (weights, &mut rest[..n_out])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// FNV-1a hash over the parameter bit patterns. Equal hashes across a
    /// training phase show the parameters were not touched.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(&self.omega0.to_bits().to_le_bytes());
        for &d in &self.dims {
            eat(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            eat(&v.to_bits().to_le_bytes());
        }
        hash
    }

    /// Serializes dims, omega0 and the row-major parameters (little endian).
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        out.write_all(&self.omega0.to_le_bytes())?;
        out.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(input, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a network parameter block".into()));
        }
        let version = read_u32(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "network block version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let n_dims = read_u32(input)? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(Error::Checkpoint(format!("implausible layer count {n_dims}")));
        }
        let dims = (0..n_dims)
            .map(|_| read_u64(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let omega0 = f64::from_bits(read_u64(input)?);
        let n_data = read_u64(input)? as usize;
        let expected = *layer_offsets(&dims).last().unwrap();
        if n_data != expected {
            return Err(Error::Checkpoint(format!(
                "parameter count {n_data} does not match dims {dims:?}"
            )));
        }
        let mut bytes = vec![0u8; n_data * 8];
        read_exact(input, &mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_raw(&dims, omega0, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

pub(crate) fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated data".into()),
        _ => Error::Checkpoint(e.to_string()),
    })
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Gradient of a scalar loss with respect to every entry of a [`SirenParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros_like(params: &SirenParams) -> Self {
        Self {
            dims: params.dims.clone(),
            data: vec![0.0; params.data.len()],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_congruent(&self, params: &SirenParams) -> bool {
        self.dims == params.dims && self.data.len() == params.data.len()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        assert_eq!(self.dims, other.dims, "gradient shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGradient, factor: f64) {
        assert_eq!(self.dims, other.dims, "gradient shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub(crate) fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Self {
        Self { dims, data }
    }
}

/// Network output and its derivative with respect to the input coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEval {
    pub value: Vec<f64>,
    /// Row-major `out_dim x in_dim`.
    pub input_jacobian: Vec<f64>,
    pub in_dim: usize,
}

impl FieldEval {
    pub fn jac(&self, out: usize, input: usize) -> f64 {
        self.input_jacobian[out * self.in_dim + input]
    }
}

/// Sensitivities of a scalar loss with respect to one sample's outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Upstream {
    pub d_value: Vec<f64>,
    /// Row-major `out_dim x in_dim`; empty when the loss ignores the Jacobian.
    pub d_jacobian: Vec<f64>,
}

impl Upstream {
    pub fn value_only(d_value: Vec<f64>) -> Self {
        Self {
            d_value,
            d_jacobian: Vec::new(),
        }
    }
}

/// Draws parameters with the Siren initialization.
///
/// `n_layers` counts linear layers, so `n_layers = 5` gives four sine layers
/// followed by a linear output.
pub fn init_siren(
    n_layers: usize,
    hidden_dim: usize,
    in_dim: usize,
    out_dim: usize,
    omega0: f64,
    seed: u64,
) -> Result<SirenParams> {
    if n_layers < 2 {
        return Err(Error::Config(format!(
            "n_layers = {n_layers}: a Siren needs at least one hidden layer"
        )));
    }
    if hidden_dim == 0 || in_dim == 0 || out_dim == 0 {
        return Err(Error::Config("network dimensions must be positive".into()));
    }
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat(hidden_dim).take(n_layers - 1));
    dims.push(out_dim);

    let mut params = SirenParams::zeros(&dims, omega0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..params.n_layers() {
        let fan_in = dims[k] as f64;
        let w_bound = if k == 0 {
            1.0 / fan_in
        } else {
            (6.0 / fan_in).sqrt() / omega0
        };
        let b_bound = 1.0 / fan_in.sqrt();
        let w_dist = Uniform::new_inclusive(-w_bound, w_bound);
        let b_dist = Uniform::new_inclusive(-b_bound, b_bound);
        let (weights, biases) = params.layer_mut(k);
        weights.iter_mut().for_each(|w| *w = w_dist.sample(&mut rng));
        biases.iter_mut().for_each(|b| *b = b_dist.sample(&mut rng));
    }
    Ok(params)
}

fn check_point(params: &SirenParams, point: &[f64]) -> Result<()> {
    if point.len() != params.in_dim() {
        return Err(Error::Shape(format!(
            "point has {} coordinates, network expects {}",
            point.len(),
            params.in_dim()
        )));
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite query point {point:?}")));
    }
    Ok(())
}

/// Evaluates the network at one point.
pub fn forward(params: &SirenParams, point: &[f64]) -> Result<Vec<f64>> {
    check_point(params, point)?;
    let mut tape = SirenTape::new(params, false);
    tape.forward(params, point);
    Ok(tape.value().to_vec())
}

/// Evaluates the network and its exact input Jacobian at one point.
pub fn eval_with_jacobian(params: &SirenParams, point: &[f64]) -> Result<FieldEval> {
    check_point(params, point)?;
    let mut tape = SirenTape::new(params, true);
    tape.forward(params, point);
    Ok(FieldEval {
        value: tape.value().to_vec(),
        input_jacobian: tape.jacobian().to_vec(),
        in_dim: params.in_dim(),
    })
}

/// Accumulates the parameter gradient of `sum_i loss_i`, where sample `i`
/// contributes through `upstream[i]`.
pub fn backprop<P: AsRef<[f64]> + Sync>(
    params: &SirenParams,
    samples: &[P],
    upstream: &[Upstream],
) -> Result<ParamGradient> {
    if samples.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} upstream entries",
            samples.len(),
            upstream.len()
        )));
    }
    let (out, inp) = (params.out_dim(), params.in_dim());
    for (s, u) in samples.iter().zip(upstream) {
        check_point(params, s.as_ref())?;
        if u.d_value.len() != out {
            return Err(Error::Shape(format!(
                "upstream value has {} entries, network has {out} outputs",
                u.d_value.len()
            )));
        }
        if !u.d_jacobian.is_empty() && u.d_jacobian.len() != out * inp {
            return Err(Error::Shape(format!(
                "upstream Jacobian has {} entries, expected {}",
                u.d_jacobian.len(),
                out * inp
            )));
        }
    }
    let needs_jac = upstream.iter().any(|u| !u.d_jacobian.is_empty());
    let data = par::accumulate(samples.len(), params.len(), |range, grad| {
        let mut tape = SirenTape::new(params, needs_jac);
        for i in range {
            tape.forward(params, samples[i].as_ref());
            let u = &upstream[i];
            let d_jac = (!u.d_jacobian.is_empty()).then_some(u.d_jacobian.as_slice());
            tape.backward(params, &u.d_value, d_jac, grad, None);
        }
    });
    Ok(ParamGradient::from_vec(params.dims.clone(), data))
}

/// Reusable activation record for one sample.
///
/// `forward` overwrites the record; `backward` adds the sample's gradient
/// into a caller-owned flat buffer laid out like [`SirenParams::as_slice`].
#[derive(Clone, Debug)]
pub struct SirenTape {
    with_jacobian: bool,
    ncol: usize,
    input: Vec<f64>,
    /// Layer outputs: `sin(omega0 z)` for hidden layers, `y` for the last.
    act: Vec<Vec<f64>>,
    /// `omega0 cos(omega0 z)` for hidden layers.
    deriv: Vec<Vec<f64>>,
    /// `dz/dx` per hidden layer, row-major `n_out x ncol`.
    dz: Vec<Vec<f64>>,
    /// `dh/dx` per layer, row-major `n_out x ncol`.
    jac: Vec<Vec<f64>>,
    g_h: Vec<f64>,
    g_h_next: Vec<f64>,
    g_j: Vec<f64>,
    g_j_next: Vec<f64>,
    g_z: Vec<f64>,
    g_d: Vec<f64>,
}

impl SirenTape {
    pub fn new(params: &SirenParams, with_jacobian: bool) -> Self {
        let ncol = params.in_dim();
        let widths = &params.dims[1..];
        let max_w = params.max_width();
        let per_layer = |scale: usize| widths.iter().map(|&w| vec![0.0; w * scale]).collect();
        let jac_scale = if with_jacobian { ncol } else { 0 };
        Self {
            with_jacobian,
            ncol,
            input: vec![0.0; ncol],
            act: per_layer(1),
            deriv: per_layer(1),
            dz: per_layer(jac_scale),
            jac: per_layer(jac_scale),
            g_h: vec![0.0; max_w],
            g_h_next: vec![0.0; max_w],
            g_j: vec![0.0; max_w * ncol],
            g_j_next: vec![0.0; max_w * ncol],
            g_z: vec![0.0; max_w],
            g_d: vec![0.0; max_w * ncol],
        }
    }

    pub fn with_jacobian(&self) -> bool {
        self.with_jacobian
    }

    pub fn value(&self) -> &[f64] {
        self.act.last().unwrap()
    }

    /// Row-major `out_dim x in_dim`. Empty unless the tape tracks Jacobians.
    pub fn jacobian(&self) -> &[f64] {
        self.jac.last().unwrap()
    }

    /// Runs the network at `point`; the caller guarantees a finite point of
    /// the right dimension.
    pub fn forward(&mut self, params: &SirenParams, point: &[f64]) {
        debug_assert_eq!(point.len(), self.ncol);
        self.input.copy_from_slice(point);
        let omega = params.omega0;
        let last = params.n_layers() - 1;
        let nc = self.ncol;
        for k in 0..=last {
            let layer = params.layer(k);
            let (before, rest) = self.act.split_at_mut(k);
            let h_prev: &[f64] = if k == 0 { &self.input } else { &before[k - 1] };
            let out = &mut rest[0];
            for o in 0..layer.n_out {
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                out[o] = layer.biases[o] + dot(row, h_prev);
            }
            if self.with_jacobian {
                let (jac_before, jac_rest) = self.jac.split_at_mut(k);
                // Hidden layers keep dz separately; the output layer writes
                // dz straight into its Jacobian.
                let dz = if k == last {
                    &mut jac_rest[0]
                } else {
                    &mut self.dz[k]
                };
                if k == 0 {
                    for o in 0..layer.n_out {
                        dz[o * nc..(o + 1) * nc]
                            .copy_from_slice(&layer.weights[o * layer.n_in..o * layer.n_in + nc]);
                    }
                } else {
                    let j_prev = &jac_before[k - 1];
                    for o in 0..layer.n_out {
                        let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                        let dst = &mut dz[o * nc..(o + 1) * nc];
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        for (i, &w) in row.iter().enumerate() {
                            let src = &j_prev[i * nc..(i + 1) * nc];
                            for c in 0..nc {
                                dst[c] += w * src[c];
                            }
                        }
                    }
                }
            }
            if k < last {
                let out = &mut self.act[k];
                let deriv = &mut self.deriv[k];
                for o in 0..layer.n_out {
                    let (s, c) = (omega * out[o]).sin_cos();
                    out[o] = s;
                    deriv[o] = omega * c;
                }
                if self.with_jacobian {
                    let dz = &self.dz[k];
                    let jac = &mut self.jac[k];
                    for o in 0..layer.n_out {
                        let d = deriv[o];
                        for c in 0..nc {
                            jac[o * nc + c] = d * dz[o * nc + c];
                        }
                    }
                }
            }
        }
    }

    /// Reverse pass for the most recent `forward`.
    ///
    /// `d_value` is `dloss/dy`; `d_jac` (row-major `out x in`) is
    /// `dloss/d(dy/dx)` and requires a Jacobian-tracking tape. The sample's
    /// parameter gradient is added into `grad`. When `d_input` is given it
    /// receives `dloss/dx`.
    pub fn backward(
        &mut self,
        params: &SirenParams,
        d_value: &[f64],
        d_jac: Option<&[f64]>,
        grad: &mut [f64],
        mut d_input: Option<&mut [f64]>,
    ) {
        assert!(
            d_jac.is_none() || self.with_jacobian,
            "Jacobian upstream needs a Jacobian-tracking tape"
        );
        debug_assert_eq!(grad.len(), params.len());
        let nc = self.ncol;
        let omega = params.omega0;
        let last = params.n_layers() - 1;
        let offsets = layer_offsets(&params.dims);
        let jac_path = d_jac.is_some();

        self.g_h[..d_value.len()].copy_from_slice(d_value);
        if let Some(dj) = d_jac {
            self.g_j[..dj.len()].copy_from_slice(dj);
        }

        for k in (0..=last).rev() {
            let layer = params.layer(k);
            let (n_in, n_out) = (layer.n_in, layer.n_out);

            if k == last {
                self.g_z[..n_out].copy_from_slice(&self.g_h[..n_out]);
                if jac_path {
                    self.g_d[..n_out * nc].copy_from_slice(&self.g_j[..n_out * nc]);
                }
            } else {
                let s = &self.act[k];
                let deriv = &self.deriv[k];
                let w2 = omega * omega;
                for o in 0..n_out {
                    let mut gz = deriv[o] * self.g_h[o];
                    if jac_path {
                        let dz = &self.dz[k][o * nc..(o + 1) * nc];
                        let gj = &self.g_j[o * nc..(o + 1) * nc];
                        gz -= w2 * s[o] * dot(gj, dz);
                        for c in 0..nc {
                            self.g_d[o * nc + c] = deriv[o] * gj[c];
                        }
                    }
                    self.g_z[o] = gz;
                }
            }

            let h_prev: &[f64] = if k == 0 { &self.input } else { &self.act[k - 1] };
            let (gw, gb) = grad[offsets[k]..offsets[k + 1]].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let gz = self.g_z[o];
                gb[o] += gz;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, &h) in row.iter_mut().zip(h_prev) {
                    *g += gz * h;
                }
                if jac_path {
                    let gd = &self.g_d[o * nc..(o + 1) * nc];
                    if k == 0 {
                        for c in 0..nc {
                            row[c] += gd[c];
                        }
                    } else {
                        let j_prev = &self.jac[k - 1];
                        for (i, g) in row.iter_mut().enumerate() {
                            *g += dot(gd, &j_prev[i * nc..(i + 1) * nc]);
                        }
                    }
                }
            }

            if k > 0 {
                let next_h = &mut self.g_h_next[..n_in];
                next_h.iter_mut().for_each(|v| *v = 0.0);
                if jac_path {
                    self.g_j_next[..n_in * nc].iter_mut().for_each(|v| *v = 0.0);
                }
                for o in 0..n_out {
                    let row = &layer.weights[o * n_in..(o + 1) * n_in];
                    let gz = self.g_z[o];
                    for (acc, &w) in next_h.iter_mut().zip(row) {
                        *acc += w * gz;
                    }
                    if jac_path {
                        let gd = &self.g_d[o * nc..(o + 1) * nc];
                        for (i, &w) in row.iter().enumerate() {
                            let dst = &mut self.g_j_next[i * nc..(i + 1) * nc];
                            for c in 0..nc {
                                dst[c] += w * gd[c];
                            }
                        }
                    }
                }
                std::mem::swap(&mut self.g_h, &mut self.g_h_next);
                std::mem::swap(&mut self.g_j, &mut self.g_j_next);
            } else if let Some(d_input) = d_input.as_deref_mut() {
                d_input.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..n_out {
                    let row = &layer.weights[o * n_in..(o + 1) * n_in];
                    for (acc, &w) in d_input.iter_mut().zip(row) {
                        *acc += w * self.g_z[o];
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
