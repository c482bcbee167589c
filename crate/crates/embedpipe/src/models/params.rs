use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::tensor::{Adam, AdamConfig, Graph, NodeId, Tensor, TensorResult};

/// Index of a named parameter inside a [`Params`] store.
pub type ParamSlot = usize;

struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Ordered, named parameter store for one model. Gradients accumulate here
/// across per-sentence graphs until the optimizer consumes them.
pub struct Params {
    entries: Vec<Entry>,
    rng: ChaCha8Rng,
}

impl Params {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Xavier-uniform matrix parameter.
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> ParamSlot {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        self.push(name, Tensor::new(vec![rows, cols], data).unwrap())
    }

    /// Embedding table with N(0, 0.1) entries.
    pub fn add_embedding(&mut self, name: &str, rows: usize, cols: usize) -> ParamSlot {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                0.1 * z
            })
            .collect();
        self.push(name, Tensor::new(vec![rows, cols], data).unwrap())
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamSlot {
        self.push(name, Tensor::zeros(shape))
    }

    fn push(&mut self, name: &str, value: Tensor) -> ParamSlot {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn name(&self, slot: ParamSlot) -> &str {
        &self.entries[slot].name
    }

    pub fn value(&self, slot: ParamSlot) -> &Tensor {
        &self.entries[slot].value
    }

    pub fn value_mut(&mut self, slot: ParamSlot) -> &mut Tensor {
        &mut self.entries[slot].value
    }

    pub fn grad(&self, slot: ParamSlot) -> &Tensor {
        &self.entries[slot].grad
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Replace a parameter value (checkpoint load); shape must match.
    pub fn set_value(&mut self, slot: ParamSlot, value: Tensor) {
        assert_eq!(self.entries[slot].value.shape(), value.shape());
        self.entries[slot].value = value;
    }

    /// One graph leaf per parameter, index-aligned with slots.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> TensorResult<Vec<NodeId>> {
        self.entries
            .iter()
            .map(|e| g.leaf(&e.value, trainable))
            .collect()
    }

    /// Pull leaf gradients off a finished graph into the store.
    pub fn accumulate_grads(&mut self, g: &Graph, leaves: &[NodeId]) {
        for (entry, leaf) in self.entries.iter_mut().zip(leaves) {
            if let Some(gr) = g.grad(*leaf) {
                for (b, v) in entry.grad.data_mut().iter_mut().zip(gr) {
                    *b += v;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for v in e.grad.data_mut() {
                *v = 0.0;
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            for v in e.grad.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn adam(&self, cfg: AdamConfig) -> Adam {
        let sizes: Vec<usize> = self.entries.iter().map(|e| e.value.numel()).collect();
        Adam::new(cfg, &sizes)
    }

    pub fn adam_step(&mut self, adam: &mut Adam) -> TensorResult<()> {
        let mut values = Vec::with_capacity(self.entries.len());
        let mut grads = Vec::with_capacity(self.entries.len());
        for e in &mut self.entries {
            let Entry { value, grad, .. } = e;
            values.push(value);
            grads.push(&*grad);
        }
        adam.step(&mut values, &grads)
    }

    pub fn snapshot_values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore_values(&mut self, snap: &[Tensor]) {
        assert_eq!(snap.len(), self.entries.len());
        for (e, t) in self.entries.iter_mut().zip(snap) {
            assert_eq!(e.value.shape(), t.shape());
            e.value = t.clone();
        }
    }

    /// SHA-256 over names and float64 bit patterns; the freezing contract
    /// compares these before and after training.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for v in e.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}
