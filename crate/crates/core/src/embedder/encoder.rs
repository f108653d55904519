//! Per-session temporal convolution encoder.
//!
//! Two valid (unpadded) 1-D convolutions with kernel sizes `k1 + k2 - 1 =
//! receptive_field` collapse a `[channels, receptive_field]` window to a single
//! hidden vector, followed by a linear projection and normalization onto the
//! unit sphere. All arithmetic is batched as matrix products.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` via a single `exp`, accurate to a few ulps in absolute terms.
fn fast_tanh(u: f64) -> f64 {
    if u.abs() > 20.0 {
        return u.signum();
    }
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

fn gelu_tanh_term(x: f64) -> f64 {
    fast_tanh(GELU_C * (x + GELU_A * x * x * x))
}

#[cfg(test)]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh_term(x))
}

/// Derivative at `x`, given `t = gelu_tanh_term(x)` from the forward pass.
fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Applies GELU to `pre`, returning the activations and the tanh terms.
fn gelu_layer(pre: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let tanh = pre.mapv(gelu_tanh_term);
    let mut act = pre.clone();
    act.zip_mut_with(&tanh, |x, &t| *x *= 0.5 * (1.0 + t));
    (act, tanh)
}

/// Layer geometry shared by every session's encoder except for the channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub n_channels: usize,
    pub receptive_field: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl Geometry {
    pub fn kernel1(&self) -> usize {
        (self.receptive_field + 2) / 2
    }

    /// Also the temporal length of the first layer's output.
    pub fn kernel2(&self) -> usize {
        self.receptive_field + 1 - self.kernel1()
    }
}

/// Weights and biases, row-major: `w1[h, c*k1 + j]`, `w2[o, t*H + i]`, `w3[d, h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl EncoderParams {
    pub fn zeros(g: &Geometry) -> Self {
        EncoderParams {
            w1: Array2::zeros((g.hidden, g.n_channels * g.kernel1())),
            b1: Array1::zeros(g.hidden),
            w2: Array2::zeros((g.hidden, g.kernel2() * g.hidden)),
            b2: Array1::zeros(g.hidden),
            w3: Array2::zeros((g.out_dim, g.hidden)),
            b3: Array1::zeros(g.out_dim),
        }
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("contiguous"),
            self.b1.as_slice().expect("contiguous"),
            self.w2.as_slice().expect("contiguous"),
            self.b2.as_slice().expect("contiguous"),
            self.w3.as_slice().expect("contiguous"),
            self.b3.as_slice().expect("contiguous"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.w2.as_slice_mut().expect("contiguous"),
            self.b2.as_slice_mut().expect("contiguous"),
            self.w3.as_slice_mut().expect("contiguous"),
            self.b3.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat indexing over all tensors in declaration order.
    pub fn get(&self, mut idx: usize) -> f64 {
        for s in self.slices() {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, mut idx: usize, value: f64) {
        for s in self.slices_mut() {
            if idx < s.len() {
                s[idx] = value;
                return;
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    geometry: Geometry,
    params: EncoderParams,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    patches: Array2<f64>,
    pre1: Array2<f64>,
    tanh1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    tanh2: Array2<f64>,
    act2: Array2<f64>,
    norms: Array1<f64>,
    /// Unit-norm outputs `[batch, out_dim]`.
    pub embeddings: Array2<f64>,
}

impl Encoder {
    /// Uniform `±1/sqrt(fan_in)` initialization for every tensor.
    pub fn seeded(geometry: Geometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = EncoderParams::zeros(&geometry);
        let fan_ins = [
            geometry.n_channels * geometry.kernel1(),
            geometry.n_channels * geometry.kernel1(),
            geometry.kernel2() * geometry.hidden,
            geometry.kernel2() * geometry.hidden,
            geometry.hidden,
            geometry.hidden,
        ];
        for (slice, fan_in) in params.slices_mut().into_iter().zip(fan_ins) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in slice.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Encoder { geometry, params }
    }

    pub fn from_params(geometry: Geometry, params: EncoderParams) -> Result<Self> {
        let expect = EncoderParams::zeros(&geometry);
        let shapes_match = expect.w1.dim() == params.w1.dim()
            && expect.b1.dim() == params.b1.dim()
            && expect.w2.dim() == params.w2.dim()
            && expect.b2.dim() == params.b2.dim()
            && expect.w3.dim() == params.w3.dim()
            && expect.b3.dim() == params.b3.dim();
        if !shapes_match {
            return Err(Error::Shape {
                expected: format!("parameters for {geometry:?}"),
                actual: "mismatched tensor shapes".into(),
            });
        }
        Ok(Encoder { geometry, params })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParams {
        &mut self.params
    }

    fn check_window(&self, w: &ArrayView2<'_, f64>) -> Result<()> {
        let g = &self.geometry;
        if w.dim() != (g.n_channels, g.receptive_field) {
            return Err(Error::Shape {
                expected: format!("[{} x {}] window", g.n_channels, g.receptive_field),
                actual: format!("[{} x {}]", w.nrows(), w.ncols()),
            });
        }
        Ok(())
    }

    /// Forward pass over a batch of windows.
    pub fn forward(&self, windows: &[ArrayView2<'_, f64>]) -> Result<ForwardCache> {
        let g = &self.geometry;
        let (k1, l1, h) = (g.kernel1(), g.kernel2(), g.hidden);
        let b = windows.len();
        let mut patches = Array2::zeros((b * l1, g.n_channels * k1));
        for (bi, w) in windows.iter().enumerate() {
            self.check_window(w)?;
            for t in 0..l1 {
                let mut row = patches.row_mut(bi * l1 + t);
                for c in 0..g.n_channels {
                    for j in 0..k1 {
                        row[c * k1 + j] = w[[c, t + j]];
                    }
                }
            }
        }
        let p = &self.params;
        let pre1 = patches.dot(&p.w1.t()) + &p.b1;
        let (act1, tanh1) = gelu_layer(&pre1);
        let flat1 = act1
            .view()
            .into_shape_with_order((b, l1 * h))
            .expect("contiguous activations");
        let pre2 = flat1.dot(&p.w2.t()) + &p.b2;
        let (act2, tanh2) = gelu_layer(&pre2);
        let mut z = act2.dot(&p.w3.t()) + &p.b3;
        let mut norms = Array1::zeros(b);
        for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n > 1e-12) {
                return Err(Error::ZeroNorm);
            }
            norms[i] = n;
            row /= n;
        }
        Ok(ForwardCache {
            patches,
            pre1,
            tanh1,
            act1,
            pre2,
            tanh2,
            act2,
            norms,
            embeddings: z,
        })
    }

    /// Backpropagates `grad_embeddings` (`dL/de`, `[batch, out_dim]`) to
    /// parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_embeddings: &Array2<f64>) -> EncoderParams {
        let g = &self.geometry;
        let (l1, h) = (g.kernel2(), g.hidden);
        let b = cache.embeddings.nrows();
        let e = &cache.embeddings;

        // Through z / |z|.
        let mut gz = grad_embeddings.to_owned();
        for i in 0..b {
            let ei = e.row(i);
            let proj = ei.dot(&grad_embeddings.row(i));
            let mut row = gz.row_mut(i);
            row.scaled_add(-proj, &ei);
            row /= cache.norms[i];
        }
        let p = &self.params;
        let dw3 = gz.t().dot(&cache.act2);
        let db3 = gz.sum_axis(Axis(0));

        let mut ga2 = gz.dot(&p.w3);
        ndarray::Zip::from(&mut ga2)
            .and(&cache.pre2)
            .and(&cache.tanh2)
            .for_each(|g, &x, &t| *g *= gelu_grad(x, t));
        let flat1 = cache
            .act1
            .view()
            .into_shape_with_order((b, l1 * h))
            .expect("contiguous activations");
        let dw2 = ga2.t().dot(&flat1);
        let db2 = ga2.sum_axis(Axis(0));

        let gflat = ga2.dot(&p.w2);
        let mut ga1 = gflat
            .into_shape_with_order((b * l1, h))
            .expect("contiguous gradients");
        ndarray::Zip::from(&mut ga1)
            .and(&cache.pre1)
            .and(&cache.tanh1)
            .for_each(|g, &x, &t| *g *= gelu_grad(x, t));
        let dw1 = ga1.t().dot(&cache.patches);
        let db1 = ga1.sum_axis(Axis(0));

        EncoderParams {
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
            w3: dw3,
            b3: db3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> Geometry {
        Geometry {
            n_channels: 2,
            receptive_field: 3,
            hidden: 4,
            out_dim: 3,
        }
    }

    #[test]
    fn kernels_cover_receptive_field() {
        for rf in 1..=16 {
            let g = Geometry {
                receptive_field: rf,
                ..geom()
            };
            assert!(g.kernel1() >= 1 && g.kernel2() >= 1);
            assert_eq!(g.kernel1() + g.kernel2() - 1, rf);
        }
        let g = Geometry {
            receptive_field: 10,
            ..geom()
        };
        assert_eq!((g.kernel1(), g.kernel2()), (6, 5));
    }

    #[test]
    fn fast_tanh_tracks_the_library() {
        for i in -4000..=4000 {
            let u = i as f64 / 100.0;
            assert!((fast_tanh(u) - u.tanh()).abs() < 1e-15, "{u}");
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x, gelu_tanh_term(x))).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_is_unit_norm_and_checks_shape() {
        let enc = Encoder::seeded(geom(), 3);
        let w = Array2::from_shape_fn((2, 3), |(c, t)| (c as f64 - t as f64) * 0.4);
        let cache = enc.forward(&[w.view(), w.view()]).unwrap();
        for row in cache.embeddings.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(cache.embeddings.row(0), cache.embeddings.row(1));
        let bad = Array2::<f64>::zeros((3, 3));
        assert!(matches!(enc.forward(&[bad.view()]), Err(Error::Shape { .. })));
    }

    #[test]
    fn flat_indexing_roundtrips() {
        let mut p = Encoder::seeded(geom(), 1).params.clone();
        let n = p.len();
        for i in [0, 7, n / 2, n - 1] {
            p.set(i, i as f64);
            assert_eq!(p.get(i), i as f64);
        }
    }
}
