//! Randomized probe networks for finite-difference checks. Inputs are held
//! as parameters so input gradients are checked alongside weights.
#![allow(dead_code)]

use acton::nn::{
    ce_elasticnet, softmax, AvgPool, BatchNorm, Conv1d, Dense, Differentiable, Embedding, Mode,
    Param,
};
use acton::Result;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Instances whose ReLU pre-activations sit closer than this to zero are
/// redrawn, so the central difference never straddles a kink.
pub const MIN_MARGIN: f64 = 1e-3;

fn rand2(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-scale..scale))
}

fn rand3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn to3(p: &Param, b: usize) -> Array3<f64> {
    let (rows, c) = p.value.dim();
    p.value.to_shape((b, rows / b, c)).unwrap().to_owned()
}

fn to2(x: &Array3<f64>) -> Array2<f64> {
    let (b, n, c) = x.dim();
    x.to_shape((b * n, c)).unwrap().to_owned()
}

fn dot3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct EmbedProbe {
    pub emb: Embedding,
    pub ids: Vec<Vec<u32>>,
    pub proj: Array3<f64>,
}

impl EmbedProbe {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, b, n) = (6, 4, 2, 5);
        let emb = Embedding::new(rand2(&mut rng, v, d, 1.0));
        let ids = (0..b)
            .map(|_| (0..n).map(|_| rng.random_range(0..v as u32)).collect())
            .collect();
        let proj = rand3(&mut rng, (b, n, d));
        Self { emb, ids, proj }
    }
}

impl Differentiable for EmbedProbe {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("E".into(), &mut self.emb.table)]
    }
    fn loss(&mut self) -> Result<f64> {
        let ids: Vec<&[u32]> = self.ids.iter().map(Vec::as_slice).collect();
        Ok(dot3(&self.emb.forward(&ids)?, &self.proj))
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        self.emb.table.zero_grad();
        let l = self.loss()?;
        self.emb.backward(&self.proj.clone());
        Ok(l)
    }
}

pub struct ConvProbe {
    pub x: Param,
    pub batch: usize,
    pub conv: Conv1d,
    pub proj: Array3<f64>,
}

impl ConvProbe {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let b = rng.random_range(1..3);
            let n = rng.random_range(3..8);
            let c = rng.random_range(1..4);
            let k = rng.random_range(1..4);
            let f = rng.random_range(1..4);
            let x = Param::new(rand2(&mut rng, b * n, c, 1.0));
            let mut conv = Conv1d::new(
                rand2(&mut rng, k * c, f, 1.0),
                rand2(&mut rng, 1, f, 0.5),
                k,
                k - 1,
                true,
            )
            .unwrap();
            let l = conv.out_len(n).unwrap();
            let proj = rand3(&mut rng, (b, l, f));
            conv.forward(&to3(&x, b)).unwrap();
            if conv.relu_margin() >= MIN_MARGIN {
                return Self {
                    x,
                    batch: b,
                    conv,
                    proj,
                };
            }
        }
    }
}

impl Differentiable for ConvProbe {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("x".into(), &mut self.x),
            ("conv.u".into(), &mut self.conv.weight),
            ("conv.b".into(), &mut self.conv.bias),
        ]
    }
    fn loss(&mut self) -> Result<f64> {
        Ok(dot3(
            &self.conv.forward(&to3(&self.x, self.batch))?,
            &self.proj,
        ))
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
        let l = self.loss()?;
        let dx = self.conv.backward(&self.proj.clone());
        self.x.grad = to2(&dx);
        Ok(l)
    }
}

pub struct PoolProbe {
    pub x: Param,
    pub batch: usize,
    pub pool: AvgPool,
    pub proj: Array3<f64>,
}

impl PoolProbe {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.random_range(1..3);
        let n = rng.random_range(2..10);
        let c = rng.random_range(1..4);
        let l = rng.random_range(1..=n);
        let s = rng.random_range(1..=l);
        let pool = AvgPool::new(l, s);
        let out = pool.out_len(n).unwrap();
        let x = Param::new(rand2(&mut rng, b * n, c, 1.0));
        let proj = rand3(&mut rng, (b, out, c));
        Self {
            x,
            batch: b,
            pool,
            proj,
        }
    }
}

impl Differentiable for PoolProbe {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("x".into(), &mut self.x)]
    }
    fn loss(&mut self) -> Result<f64> {
        Ok(dot3(
            &self.pool.forward(&to3(&self.x, self.batch))?,
            &self.proj,
        ))
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        self.x.zero_grad();
        let l = self.loss()?;
        self.x.grad = to2(&self.pool.backward(&self.proj));
        Ok(l)
    }
}

pub struct BnProbe {
    pub x: Param,
    pub bn: BatchNorm,
    pub proj: Array2<f64>,
}

impl BnProbe {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..7);
        let f = rng.random_range(1..4);
        let mut bn = BatchNorm::new(f);
        bn.gamma.value = rand2(&mut rng, 1, f, 2.0);
        bn.beta.value = rand2(&mut rng, 1, f, 1.0);
        let x = Param::new(rand2(&mut rng, n, f, 2.0));
        let proj = rand2(&mut rng, n, f, 1.0);
        Self { x, bn, proj }
    }
}

impl Differentiable for BnProbe {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("x".into(), &mut self.x),
            ("bn.gamma".into(), &mut self.bn.gamma),
            ("bn.beta".into(), &mut self.bn.beta),
        ]
    }
    fn loss(&mut self) -> Result<f64> {
        let y = self.bn.forward(&self.x.value, Mode::Train)?;
        Ok((&y * &self.proj).sum())
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
        let l = self.loss()?;
        self.x.grad = self.bn.backward(&self.proj.clone());
        Ok(l)
    }
}

pub struct DenseProbe {
    pub x: Param,
    pub dense: Dense,
    pub proj: Array2<f64>,
}

impl DenseProbe {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let b = rng.random_range(1..5);
            let i = rng.random_range(1..6);
            let o = rng.random_range(1..6);
            let mut dense =
                Dense::new(rand2(&mut rng, i, o, 1.0), rand2(&mut rng, 1, o, 0.5), true).unwrap();
            let x = Param::new(rand2(&mut rng, b, i, 1.0));
            let proj = rand2(&mut rng, b, o, 1.0);
            dense.forward(&x.value).unwrap();
            if dense.relu_margin() >= MIN_MARGIN {
                return Self { x, dense, proj };
            }
        }
    }
}

impl Differentiable for DenseProbe {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("x".into(), &mut self.x),
            ("dense.V".into(), &mut self.dense.weight),
            ("dense.b".into(), &mut self.dense.bias),
        ]
    }
    fn loss(&mut self) -> Result<f64> {
        Ok((&self.dense.forward(&self.x.value)? * &self.proj).sum())
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
        let l = self.loss()?;
        self.x.grad = self.dense.backward(&self.proj.clone());
        Ok(l)
    }
}

/// Linear layer, softmax and elastic-net cross-entropy: a one-layer
/// classifier.
pub struct SoftmaxProbe {
    pub x: Param,
    pub head: Dense,
    pub gold: Vec<usize>,
    pub l1: f64,
    pub l2: f64,
}

impl SoftmaxProbe {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.random_range(1..6);
        let i = rng.random_range(1..5);
        let k = rng.random_range(2..4);
        let mut w = rand2(&mut rng, i, k, 1.0);
        // keep weights away from the L1 kink
        w.mapv_inplace(|v| {
            if v.abs() < MIN_MARGIN {
                v + 2.0 * MIN_MARGIN
            } else {
                v
            }
        });
        let head = Dense::new(w, rand2(&mut rng, 1, k, 0.5), false).unwrap();
        let x = Param::new(rand2(&mut rng, b, i, 1.0));
        let gold = (0..b).map(|_| rng.random_range(0..k)).collect();
        let l1 = [0.0, 0.25, 0.5, 1.0][rng.random_range(0..4)];
        let l2 = [0.0, 0.25, 0.5, 1.0][rng.random_range(0..4)];
        Self {
            x,
            head,
            gold,
            l1,
            l2,
        }
    }
}

impl Differentiable for SoftmaxProbe {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("x".into(), &mut self.x),
            ("head.W".into(), &mut self.head.weight),
            ("head.b".into(), &mut self.head.bias),
        ]
    }
    fn loss(&mut self) -> Result<f64> {
        let p = softmax(&self.head.forward(&self.x.value)?);
        Ok(ce_elasticnet(&p, &self.gold, &self.head.weight.value, self.l1, self.l2)?.loss)
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
        let p = softmax(&self.head.forward(&self.x.value)?);
        let ce = ce_elasticnet(&p, &self.gold, &self.head.weight.value, self.l1, self.l2)?;
        self.x.grad = self.head.backward(&ce.d_logits);
        self.head.weight.grad += &ce.d_weights;
        Ok(ce.loss)
    }
}

/// Embedding, wide conv + ReLU, pooling, batch norm, dense + ReLU, and a
/// softmax head with elastic net.
pub struct StackProbe {
    pub emb: Embedding,
    pub conv: Conv1d,
    pub pool: AvgPool,
    pub bn: BatchNorm,
    pub hidden: Dense,
    pub head: Dense,
    pub ids: Vec<Vec<u32>>,
    pub gold: Vec<usize>,
    pub pooled: usize,
    pub l1: f64,
    pub l2: f64,
}

impl StackProbe {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let (v, d, n, b, f, k) = (7, 3, 8, 4, 3, 3);
            let emb = Embedding::new(rand2(&mut rng, v, d, 1.0));
            let conv = Conv1d::new(
                rand2(&mut rng, k * d, f, 1.0),
                rand2(&mut rng, 1, f, 0.3),
                k,
                k - 1,
                true,
            )
            .unwrap();
            let pool = AvgPool::new(2, 2);
            let pooled = pool.out_len(conv.out_len(n).unwrap()).unwrap();
            let mut bn = BatchNorm::new(f);
            bn.gamma.value = rand2(&mut rng, 1, f, 1.5);
            bn.beta.value = rand2(&mut rng, 1, f, 0.5);
            let hidden = Dense::new(
                rand2(&mut rng, pooled * f, 4, 1.0),
                rand2(&mut rng, 1, 4, 0.5),
                true,
            )
            .unwrap();
            let mut hw = rand2(&mut rng, 4, 3, 1.0);
            hw.mapv_inplace(|v| {
                if v.abs() < MIN_MARGIN {
                    v + 2.0 * MIN_MARGIN
                } else {
                    v
                }
            });
            let head = Dense::new(hw, rand2(&mut rng, 1, 3, 0.5), false).unwrap();
            let ids = (0..b)
                .map(|_| (0..n).map(|_| rng.random_range(0..v as u32)).collect())
                .collect();
            let gold = (0..b).map(|_| rng.random_range(0..3)).collect();
            let mut probe = Self {
                emb,
                conv,
                pool,
                bn,
                hidden,
                head,
                ids,
                gold,
                pooled,
                l1: 0.25,
                l2: 0.25,
            };
            probe.loss().unwrap();
            if probe.conv.relu_margin() >= MIN_MARGIN && probe.hidden.relu_margin() >= MIN_MARGIN {
                return probe;
            }
        }
    }

    fn probs(&mut self) -> Result<Array2<f64>> {
        let ids: Vec<&[u32]> = self.ids.iter().map(Vec::as_slice).collect();
        let x = self.emb.forward(&ids)?;
        let h = self.conv.forward(&x)?;
        let p = self.pool.forward(&h)?;
        let z = self.bn.forward3(&p, Mode::Train)?;
        let (b, l, c) = z.dim();
        let flat = z.into_shape_with_order((b, l * c)).unwrap();
        let m = self.hidden.forward(&flat)?;
        Ok(softmax(&self.head.forward(&m)?))
    }
}

impl Differentiable for StackProbe {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("E".into(), &mut self.emb.table),
            ("conv.u".into(), &mut self.conv.weight),
            ("conv.b".into(), &mut self.conv.bias),
            ("bn.gamma".into(), &mut self.bn.gamma),
            ("bn.beta".into(), &mut self.bn.beta),
            ("dense.V".into(), &mut self.hidden.weight),
            ("dense.b".into(), &mut self.hidden.bias),
            ("head.W".into(), &mut self.head.weight),
            ("head.b".into(), &mut self.head.bias),
        ]
    }
    fn loss(&mut self) -> Result<f64> {
        let p = self.probs()?;
        Ok(ce_elasticnet(&p, &self.gold, &self.head.weight.value, self.l1, self.l2)?.loss)
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
        let p = self.probs()?;
        let ce = ce_elasticnet(&p, &self.gold, &self.head.weight.value, self.l1, self.l2)?;
        let dm = self.head.backward(&ce.d_logits);
        self.head.weight.grad += &ce.d_weights;
        let dflat = self.hidden.backward(&dm);
        let dz = dflat
            .into_shape_with_order((self.ids.len(), self.pooled, self.bn.features()))
            .unwrap();
        let dp = self.bn.backward3(&dz);
        let dh = self.pool.backward(&dp);
        let dx = self.conv.backward(&dh);
        self.emb.backward(&dx);
        Ok(ce.loss)
    }
}

/// Wraps a probe and scales the first parameter's gradient, simulating a
/// broken backward pass.
pub struct Corrupted<T>(pub T);

impl<T: Differentiable> Differentiable for Corrupted<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.0.params_mut()
    }
    fn loss(&mut self) -> Result<f64> {
        self.0.loss()
    }
    fn loss_and_grads(&mut self) -> Result<f64> {
        let l = self.0.loss_and_grads()?;
        if let Some((_, p)) = self.0.params_mut().into_iter().next() {
            p.grad *= 1.5;
        }
        Ok(l)
    }
}
