//! Small fully-connected networks with hand-written reverse mode.
//!
//! Parameters of all layers live in one flat buffer (per layer: weights
//! `out × in` row-major, then biases), which keeps Adam, Polyak averaging,
//! serialization and finite-difference checks to plain slice loops. Hidden
//! layers use ReLU; the output head is tanh (actors) or identity (critics).
//! The matrix products go through `matrixmultiply`.

use std::fmt::Debug;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("input has {found} values, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("cache was produced by a different network or before a parameter update")]
    StaleCache,
    #[error("parameter shape mismatch: {0}")]
    Shape(String),
    #[error("polyak coefficient {0} outside [0, 1]")]
    Tau(f64),
    #[error("network file: {0}")]
    Format(String),
    #[error("network file checksum mismatch")]
    Checksum,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NeuralError {
    fn from(e: std::io::Error) -> Self {
        NeuralError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NeuralError>;

/// Float type a network can be instantiated with.
pub trait Real: num_traits::Float + Default + Debug + Send + Sync + 'static {
    /// `C = alpha·A·B + beta·C` for strided `A (m×k)`, `B (k×n)`, `C (m×n)`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                // SAFETY: every operand's strided extent was bounds-checked above.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Actor,
    Critic,
    Fqe,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Actor => 0,
            Role::Critic => 1,
            Role::Fqe => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Role::Actor),
            1 => Ok(Role::Critic),
            2 => Ok(Role::Fqe),
            t => Err(NeuralError::Format(format!("unknown role tag {t}"))),
        }
    }

    pub fn head(self) -> Head {
        match self {
            Role::Actor => Head::Tanh,
            Role::Critic | Role::Fqe => Head::Identity,
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Mlp<T: Real> {
    dims: Vec<usize>,
    head: Head,
    params: Vec<T>,
    id: u64,
    generation: u64,
}

impl<T: Real> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Mlp {
            dims: self.dims.clone(),
            head: self.head,
            params: self.params.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl<T: Real> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.head == other.head && self.params == other.params
    }
}

/// Activations recorded by `forward` for `backward`.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    stamp: (u64, u64),
    batch: usize,
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T: Real> Cache<T> {
    /// Sign pattern of every hidden ReLU unit, row-major per layer.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden].iter().flatten().map(|&z| z > T::zero()).collect()
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// Weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new<R: rand::Rng + ?Sized>(dims: &[usize], head: Head, rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "bad layer dims {dims:?}");
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[1] * w[0] + w[1] {
                params.push(T::of(rng.random_range(-bound..=bound)));
            }
        }
        Mlp { dims: dims.to_vec(), head, params, id: fresh_id(), generation: 0 }
    }

    pub fn zeros(dims: &[usize], head: Head) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "bad layer dims {dims:?}");
        Mlp {
            dims: dims.to_vec(),
            head,
            params: vec![T::zero(); param_count(dims)],
            id: fresh_id(),
            generation: 0,
        }
    }

    pub fn from_params(dims: &[usize], head: Head, params: Vec<T>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NeuralError::Shape(format!("bad layer dims {dims:?}")));
        }
        if params.len() != param_count(dims) {
            return Err(NeuralError::Shape(format!(
                "{} parameters for dims {dims:?} (expected {})",
                params.len(),
                param_count(dims)
            )));
        }
        Ok(Mlp { dims: dims.to_vec(), head, params, id: fresh_id(), generation: 0 })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.generation += 1;
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Network computing `self((x − shift) ⊙ scale)` on raw inputs `x`,
    /// obtained by rewriting the first layer.
    pub fn fold_input_affine(&self, shift: &[f64], scale: &[f64]) -> Result<Mlp<T>> {
        let fan_in = self.input_dim();
        if shift.len() != fan_in || scale.len() != fan_in {
            return Err(NeuralError::Shape(format!("affine of width {} for input {fan_in}", shift.len())));
        }
        let mut out = self.clone();
        let fan_out = self.dims[1];
        let (w_off, b_off) = self.layer_offsets(0);
        for j in 0..fan_out {
            let mut bias = self.params[b_off + j].to_f64().expect("finite");
            for i in 0..fan_in {
                let w = self.params[w_off + j * fan_in + i].to_f64().expect("finite") * scale[i];
                out.params[w_off + j * fan_in + i] = T::of(w);
                bias -= w * shift[i];
            }
            out.params[b_off + j] = T::of(bias);
        }
        Ok(out)
    }

    /// Same architecture and values in another float type.
    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            dims: self.dims.clone(),
            head: self.head,
            params: self.params.iter().map(|p| U::of(p.to_f64().expect("finite"))).collect(),
            id: fresh_id(),
            generation: 0,
        }
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let before = param_count(&self.dims[..=l]);
        (before, before + self.dims[l + 1] * self.dims[l])
    }

    fn affine(&self, l: usize, input: &[T], batch: usize) -> Vec<T> {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let (w_off, b_off) = self.layer_offsets(l);
        let bias = &self.params[b_off..b_off + fan_out];
        let mut z: Vec<T> = bias.iter().copied().cycle().take(batch * fan_out).collect();
        T::gemm(
            batch,
            fan_in,
            fan_out,
            T::one(),
            input,
            (fan_in as isize, 1),
            &self.params[w_off..b_off],
            (1, fan_in as isize),
            T::one(),
            &mut z,
            (fan_out as isize, 1),
        );
        z
    }

    fn check_input(&self, input: &[T], batch: usize) -> Result<()> {
        let expected = batch * self.input_dim();
        if input.len() != expected || batch == 0 {
            return Err(NeuralError::DimMismatch { expected, found: input.len() });
        }
        Ok(())
    }

    /// Batched forward pass over `batch` row-major inputs.
    pub fn forward(&self, input: &[T], batch: usize) -> Result<(Vec<T>, Cache<T>)> {
        self.check_input(input, batch)?;
        let layers = self.dims.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut act = input.to_vec();
        for l in 0..layers {
            let z = self.affine(l, &act, batch);
            let next = if l + 1 < layers {
                z.iter().map(|v| v.max(T::zero())).collect()
            } else {
                self.apply_head(&z)
            };
            inputs.push(act);
            pre.push(z);
            act = next;
        }
        let cache = Cache {
            stamp: (self.id, self.generation),
            batch,
            inputs,
            pre,
            output: act.clone(),
        };
        Ok((act, cache))
    }

    /// Forward pass without recording a cache.
    pub fn predict(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_input(input, batch)?;
        let layers = self.dims.len() - 1;
        let mut act = input.to_vec();
        for l in 0..layers {
            let mut z = self.affine(l, &act, batch);
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.max(T::zero()));
                act = z;
            } else {
                act = self.apply_head(&z);
            }
        }
        Ok(act)
    }

    fn apply_head(&self, z: &[T]) -> Vec<T> {
        match self.head {
            Head::Tanh => z.iter().map(|v| v.tanh()).collect(),
            Head::Identity => z.to_vec(),
        }
    }

    /// Reverse pass. Returns `(parameter gradients, input gradients)` for the
    /// scalar `Σ grad_out ⊙ output`.
    pub fn backward(&self, cache: &Cache<T>, grad_out: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.backprop(cache, grad_out, true)
    }

    /// Gradient with respect to the inputs only.
    pub fn input_gradient(&self, cache: &Cache<T>, grad_out: &[T]) -> Result<Vec<T>> {
        self.backprop(cache, grad_out, false).map(|(_, gx)| gx)
    }

    fn backprop(&self, cache: &Cache<T>, grad_out: &[T], want_params: bool) -> Result<(Vec<T>, Vec<T>)> {
        if cache.stamp != (self.id, self.generation) {
            return Err(NeuralError::StaleCache);
        }
        let batch = cache.batch;
        let layers = self.dims.len() - 1;
        if grad_out.len() != batch * self.output_dim() {
            return Err(NeuralError::DimMismatch { expected: batch * self.output_dim(), found: grad_out.len() });
        }
        let mut grads = vec![T::zero(); if want_params { self.params.len() } else { 0 }];
        let mut dz: Vec<T> = match self.head {
            Head::Tanh => grad_out
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| *g * (T::one() - *y * *y))
                .collect(),
            Head::Identity => grad_out.to_vec(),
        };
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let x = &cache.inputs[l];
            if want_params {
                let (gw, gb) = grads[w_off..b_off + fan_out].split_at_mut(fan_out * fan_in);
                // dW = dZᵀ · X
                T::gemm(
                    fan_out,
                    batch,
                    fan_in,
                    T::one(),
                    &dz,
                    (1, fan_out as isize),
                    x,
                    (fan_in as isize, 1),
                    T::zero(),
                    gw,
                    (fan_in as isize, 1),
                );
                for row in dz.chunks_exact(fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g = *g + *d;
                    }
                }
            }
            // dX = dZ · W
            let mut dx = vec![T::zero(); batch * fan_in];
            T::gemm(
                batch,
                fan_out,
                fan_in,
                T::one(),
                &dz,
                (fan_out as isize, 1),
                &self.params[w_off..b_off],
                (fan_in as isize, 1),
                T::zero(),
                &mut dx,
                (fan_in as isize, 1),
            );
            if l > 0 {
                for (g, z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    if *z <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            dz = dx;
        }
        Ok((grads, dz))
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_net(net: &Mlp<T>, lr: f64) -> Self {
        Self::new(net.num_params(), lr)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(net: &mut Mlp<T>, grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    let n = net.num_params();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(NeuralError::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            n,
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(state.lr), T::of(state.eps));
    let params = net.params_mut();
    for i in 0..n {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// `target ← τ·online + (1 − τ)·target`.
pub fn polyak_update<T: Real>(target: &mut Mlp<T>, online: &Mlp<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NeuralError::Tau(tau));
    }
    if target.dims != online.dims {
        return Err(NeuralError::Shape(format!("polyak: {:?} vs {:?}", target.dims, online.dims)));
    }
    let (t, keep) = (T::of(tau), T::of(1.0 - tau));
    for (p, o) in target.params_mut().iter_mut().zip(&online.params) {
        *p = t * *o + keep * *p;
    }
    Ok(())
}

/// Metadata stored next to a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMeta {
    pub role: Role,
    pub step: u64,
    pub fingerprint: u64,
    pub score: Option<f64>,
}

pub const NET_MAGIC: &[u8; 4] = b"MNET";
pub const NET_VERSION: u32 = 1;

/// Serialize: magic, version, role tag, head tag, layer dims, step,
/// fingerprint, optional score, little-endian f32 parameters, CRC32.
pub fn encode_network(net: &Mlp<f32>, meta: &NetworkMeta) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 4 * net.num_params());
    buf.extend_from_slice(NET_MAGIC);
    buf.extend_from_slice(&NET_VERSION.to_le_bytes());
    buf.push(meta.role.tag());
    buf.push(match net.head {
        Head::Tanh => 0,
        Head::Identity => 1,
    });
    buf.extend_from_slice(&(net.dims.len() as u32).to_le_bytes());
    for d in &net.dims {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&meta.step.to_le_bytes());
    buf.extend_from_slice(&meta.fingerprint.to_le_bytes());
    buf.push(u8::from(meta.score.is_some()));
    buf.extend_from_slice(&meta.score.unwrap_or(0.0).to_le_bytes());
    buf.extend_from_slice(&(net.num_params() as u32).to_le_bytes());
    for p in &net.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_network(bytes: &[u8]) -> Result<(Mlp<f32>, NetworkMeta)> {
    let short = || NeuralError::Format("truncated".into());
    if bytes.len() < 8 || &bytes[..4] != NET_MAGIC {
        return Err(NeuralError::Format("bad magic".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(NeuralError::Checksum);
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(short)?;
        pos += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != NET_VERSION {
        return Err(NeuralError::Format(format!("unsupported version {version}")));
    }
    let role = Role::from_tag(take(1)?[0])?;
    let head = match take(1)?[0] {
        0 => Head::Tanh,
        1 => Head::Identity,
        t => return Err(NeuralError::Format(format!("unknown head tag {t}"))),
    };
    let ndims = u32_at(take(4)?) as usize;
    let dims = (0..ndims).map(|_| take(4).map(|s| u32_at(s) as usize)).collect::<Result<Vec<_>>>()?;
    let step = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let fingerprint = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let has_score = take(1)?[0] != 0;
    let score = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let n = u32_at(take(4)?) as usize;
    let params = (0..n).map(|_| take(4).map(|s| f32::from_le_bytes(s.try_into().expect("4 bytes")))).collect::<Result<Vec<_>>>()?;
    if pos != body.len() {
        return Err(NeuralError::Format("trailing bytes".into()));
    }
    let net = Mlp::from_params(&dims, head, params)?;
    Ok((net, NetworkMeta { role, step, fingerprint, score: has_score.then_some(score) }))
}

pub fn save_network(path: &Path, net: &Mlp<f32>, meta: &NetworkMeta) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_network(net, meta))?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Mlp<f32>, NetworkMeta)> {
    decode_network(&std::fs::read(path)?)
}
