use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Mode, Param};
use crate::domain::SymbolId;
use crate::error::{Error, Result};

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Symbol lookup table `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: Param,
    #[serde(skip)]
    ids: Vec<Vec<SymbolId>>,
}

impl Embedding {
    pub fn new(table: Array2<f64>) -> Self {
        Self {
            table: Param::new(table),
            ids: Vec::new(),
        }
    }

    /// Table drawn from `U(-0.5/d, 0.5/d)`.
    pub fn random<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Self::new(uniform(vocab, dim, 0.5 / dim as f64, rng))
    }

    pub fn dim(&self) -> usize {
        self.table.value.ncols()
    }

    /// `(batch, n, d)` rows of the table; all sequences must share a length.
    pub fn forward(&mut self, batch: &[&[SymbolId]]) -> Result<Array3<f64>> {
        let n = batch.first().map_or(0, |s| s.len());
        let (v, d) = self.table.value.dim();
        let mut out = Array3::zeros((batch.len(), n, d));
        for (b, seq) in batch.iter().enumerate() {
            if seq.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: seq.len(),
                });
            }
            for (i, &t) in seq.iter().enumerate() {
                let t = t as usize;
                if t >= v {
                    return Err(Error::IdOutOfRange { id: t, rows: v });
                }
                out.slice_mut(s![b, i, ..]).assign(&self.table.value.row(t));
            }
        }
        self.ids = batch.iter().map(|s| s.to_vec()).collect();
        Ok(out)
    }

    /// Adds upstream row gradients into the rows that were looked up.
    pub fn backward(&mut self, d_out: &Array3<f64>) {
        for (b, seq) in self.ids.iter().enumerate() {
            for (i, &t) in seq.iter().enumerate() {
                let mut row = self.table.grad.row_mut(t as usize);
                row += &d_out.slice(s![b, i, ..]);
            }
        }
    }
}

/// One-dimensional convolution over `(batch, n, c_in)` with zero padding
/// `padding` on both ends and stride 1; optional fused ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    /// `(kernel * c_in, filters)`, window-major.
    pub weight: Param,
    pub bias: Param,
    pub kernel: usize,
    pub padding: usize,
    pub relu: bool,
    #[serde(skip)]
    input: Option<Array3<f64>>,
    #[serde(skip)]
    output: Option<Array3<f64>>,
    #[serde(skip)]
    margin: f64,
}

impl Conv1d {
    pub fn new(
        weight: Array2<f64>,
        bias: Array2<f64>,
        kernel: usize,
        padding: usize,
        relu: bool,
    ) -> Result<Self> {
        if kernel == 0 || !weight.nrows().is_multiple_of(kernel) {
            return Err(Error::ShapeMismatch(format!(
                "filter rows {} not a multiple of kernel {kernel}",
                weight.nrows()
            )));
        }
        if bias.dim() != (1, weight.ncols()) {
            return Err(Error::ShapeMismatch("bias must be 1 x filters".into()));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            kernel,
            padding,
            relu,
            input: None,
            output: None,
            margin: f64::INFINITY,
        })
    }

    /// Wide convolution (`padding = kernel - 1`) with He-uniform filters.
    pub fn wide<R: Rng + ?Sized>(c_in: usize, filters: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = kernel * c_in;
        let w = uniform(fan_in, filters, (6.0 / fan_in as f64).sqrt(), rng);
        Self::new(w, Array2::zeros((1, filters)), kernel, kernel - 1, true)
            .expect("consistent shapes")
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.nrows() / self.kernel
    }

    pub fn filters(&self) -> usize {
        self.weight.value.ncols()
    }

    /// `n + 2o - k + 1`.
    pub fn out_len(&self, n: usize) -> Result<usize> {
        (n + 2 * self.padding + 1)
            .checked_sub(self.kernel)
            .filter(|&l| l > 0)
            .ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "sequence of {n} too short for kernel {}",
                    self.kernel
                ))
            })
    }

    /// Smallest |pre-activation| seen by the last forward pass.
    pub fn relu_margin(&self) -> f64 {
        self.margin
    }

    fn im2col(&self, x: ndarray::ArrayView2<f64>, l_out: usize) -> Array2<f64> {
        let (n, c) = x.dim();
        let mut cols = Array2::zeros((l_out, self.kernel * c));
        for i in 0..l_out {
            for j in 0..self.kernel {
                let src = (i + j) as isize - self.padding as isize;
                if src >= 0 && (src as usize) < n {
                    cols.slice_mut(s![i, j * c..(j + 1) * c])
                        .assign(&x.row(src as usize));
                }
            }
        }
        cols
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (b, n, c) = x.dim();
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} channels, got {c}",
                self.in_channels()
            )));
        }
        let l_out = self.out_len(n)?;
        let f = self.filters();
        let items: Vec<Array2<f64>> = (0..b)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(x.index_axis(Axis(0), i), l_out);
                cols.dot(&self.weight.value) + &self.bias.value
            })
            .collect();
        let mut out = Array3::zeros((b, l_out, f));
        let mut margin = f64::INFINITY;
        for (i, z) in items.into_iter().enumerate() {
            if self.relu {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            }
            out.index_axis_mut(Axis(0), i).assign(&z);
        }
        if self.relu {
            out.mapv_inplace(|v| v.max(0.0));
        }
        self.margin = margin;
        self.input = Some(x.clone());
        self.output = Some(out.clone());
        Ok(out)
    }

    /// Accumulates filter and bias gradients and returns dL/dX.
    pub fn backward(&mut self, d_out: &Array3<f64>) -> Array3<f64> {
        let x = self.input.as_ref().expect("forward before backward");
        let y = self.output.as_ref().expect("forward before backward");
        let (b, n, c) = x.dim();
        let l_out = y.dim().1;
        let mut dz = d_out.clone();
        if self.relu {
            ndarray::Zip::from(&mut dz).and(y).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let parts: Vec<(Array2<f64>, Array2<f64>)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(x.index_axis(Axis(0), i), l_out);
                let g = dz.index_axis(Axis(0), i);
                let dw = cols.t().dot(&g);
                let dcols = g.dot(&self.weight.value.t());
                let mut dx = Array2::zeros((n, c));
                for r in 0..l_out {
                    for j in 0..self.kernel {
                        let src = (r + j) as isize - self.padding as isize;
                        if src >= 0 && (src as usize) < n {
                            let mut row = dx.row_mut(src as usize);
                            row += &dcols.slice(s![r, j * c..(j + 1) * c]);
                        }
                    }
                }
                (dw, dx)
            })
            .collect();
        let mut dx = Array3::zeros((b, n, c));
        for (i, (dw, dxi)) in parts.into_iter().enumerate() {
            self.weight.grad += &dw;
            dx.index_axis_mut(Axis(0), i).assign(&dxi);
        }
        let db = dz.sum_axis(Axis(0)).sum_axis(Axis(0));
        self.bias.grad.row_mut(0).scaled_add(1.0, &db);
        dx
    }
}

/// Mean over windows of `window` positions taken every `stride` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvgPool {
    pub window: usize,
    pub stride: usize,
    #[serde(skip)]
    in_len: usize,
}

impl AvgPool {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window: window.max(1),
            stride: stride.max(1),
            in_len: 0,
        }
    }

    pub fn out_len(&self, n: usize) -> Result<usize> {
        if self.window > n {
            return Err(Error::WindowTooLarge {
                window: self.window,
                len: n,
            });
        }
        Ok((n - self.window) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (b, n, c) = x.dim();
        let l = self.out_len(n)?;
        let mut out = Array3::zeros((b, l, c));
        let scale = 1.0 / self.window as f64;
        for i in 0..l {
            let start = i * self.stride;
            let mean = x
                .slice(s![.., start..start + self.window, ..])
                .sum_axis(Axis(1))
                * scale;
            out.slice_mut(s![.., i, ..]).assign(&mean);
        }
        self.in_len = n;
        Ok(out)
    }

    pub fn backward(&self, d_out: &Array3<f64>) -> Array3<f64> {
        let (b, l, c) = d_out.dim();
        let mut dx = Array3::zeros((b, self.in_len, c));
        let scale = 1.0 / self.window as f64;
        for i in 0..l {
            let start = i * self.stride;
            let g = d_out.slice(s![.., i, ..]).to_owned() * scale;
            for j in start..start + self.window {
                let mut dst = dx.slice_mut(s![.., j, ..]);
                dst += &g;
            }
        }
        dx
    }
}

/// Per-feature batch normalization over the rows of a 2-D batch. Sequence
/// maps are normalized per channel over batch and positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
    #[serde(skip)]
    cache: Option<(Array2<f64>, Array1<f64>, Mode)>,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(Array2::ones((1, features))),
            beta: Param::zeros(1, features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.ncols()
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        let (n, f) = x.dim();
        if f != self.features() {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm over {} features, got {f}",
                self.features()
            )));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let mean = x.mean_axis(Axis(0)).expect("non-empty");
                let var = (x - &mean)
                    .mapv(|v| v * v)
                    .mean_axis(Axis(0))
                    .expect("non-empty");
                let m = self.momentum;
                self.running_mean = &self.running_mean * m + &mean * (1.0 - m);
                self.running_var = &self.running_var * m + &var * (1.0 - m);
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let out = &xhat * &self.gamma.value.row(0) + self.beta.value.row(0);
        self.cache = Some((xhat, inv_std, mode));
        Ok(out)
    }

    pub fn backward(&mut self, d_out: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std, mode) = self.cache.as_ref().expect("forward before backward");
        let n = xhat.nrows() as f64;
        self.beta
            .grad
            .row_mut(0)
            .scaled_add(1.0, &d_out.sum_axis(Axis(0)));
        self.gamma
            .grad
            .row_mut(0)
            .scaled_add(1.0, &(d_out * xhat).sum_axis(Axis(0)));
        let dxhat = d_out * &self.gamma.value.row(0);
        match mode {
            Mode::Eval => dxhat * inv_std,
            Mode::Train => {
                let sum = dxhat.sum_axis(Axis(0));
                let dot = (&dxhat * xhat).sum_axis(Axis(0));
                ((&dxhat * n) - &sum - &(xhat * &dot)) * &(inv_std / n)
            }
        }
    }

    pub fn forward3(&mut self, x: &Array3<f64>, mode: Mode) -> Result<Array3<f64>> {
        let (b, l, c) = x.dim();
        let flat = x.to_shape((b * l, c)).map_err(shape_err)?.to_owned();
        let out = self.forward(&flat, mode)?;
        out.into_shape_with_order((b, l, c)).map_err(shape_err)
    }

    pub fn backward3(&mut self, d_out: &Array3<f64>) -> Array3<f64> {
        let (b, l, c) = d_out.dim();
        let flat = d_out.to_shape((b * l, c)).expect("contiguous").to_owned();
        self.backward(&flat)
            .into_shape_with_order((b, l, c))
            .expect("same size")
    }
}

fn shape_err(e: ndarray::ShapeError) -> Error {
    Error::ShapeMismatch(e.to_string())
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` in train mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub p: f64,
    #[serde(skip)]
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
        Ok(Self { p, mask: None })
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Array2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Array2<f64> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<f64>() < self.p {
                0.0
            } else {
                keep
            }
        });
        let out = x * &mask;
        self.mask = Some(mask);
        out
    }

    pub fn backward(&self, d_out: &Array2<f64>) -> Array2<f64> {
        match &self.mask {
            Some(m) => d_out * m,
            None => d_out.clone(),
        }
    }
}

/// Affine map `x·V + b` with optional ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `(in, out)`.
    pub weight: Param,
    pub bias: Param,
    pub relu: bool,
    #[serde(skip)]
    input: Option<Array2<f64>>,
    #[serde(skip)]
    output: Option<Array2<f64>>,
    #[serde(skip)]
    margin: f64,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array2<f64>, relu: bool) -> Result<Self> {
        if bias.dim() != (1, weight.ncols()) {
            return Err(Error::ShapeMismatch("bias must be 1 x outputs".into()));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            relu,
            input: None,
            output: None,
            margin: f64::INFINITY,
        })
    }

    /// He-uniform weights, zero bias.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, relu: bool, rng: &mut R) -> Self {
        let w = uniform(inputs, outputs, (6.0 / inputs as f64).sqrt(), rng);
        Self::new(w, Array2::zeros((1, outputs)), relu).expect("consistent shapes")
    }

    pub fn zeros(inputs: usize, outputs: usize, relu: bool) -> Self {
        Self::new(
            Array2::zeros((inputs, outputs)),
            Array2::zeros((1, outputs)),
            relu,
        )
        .expect("consistent shapes")
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn relu_margin(&self) -> f64 {
        self.margin
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "dense expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        let mut z = x.dot(&self.weight.value) + &self.bias.value;
        if self.relu {
            self.margin = z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            z.mapv_inplace(|v| v.max(0.0));
        }
        self.input = Some(x.clone());
        self.output = Some(z.clone());
        Ok(z)
    }

    pub fn backward(&mut self, d_out: &Array2<f64>) -> Array2<f64> {
        let x = self.input.as_ref().expect("forward before backward");
        let mut dz = d_out.clone();
        if self.relu {
            let y = self.output.as_ref().expect("forward before backward");
            ndarray::Zip::from(&mut dz).and(y).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        self.weight.grad += &x.t().dot(&dz);
        self.bias
            .grad
            .row_mut(0)
            .scaled_add(1.0, &dz.sum_axis(Axis(0)));
        dz.dot(&self.weight.value.t())
    }
}
