//! Frozen Bernoulli masks that carve overlapping subnetworks out of one dense network.
//!
//! Subnetwork `i` is the parameter view `θ ⊙ m_i`. Masks cover linear weights and
//! biases only; layer-norm gain and bias are always active and shared. Subnet
//! indices are zero-based throughout the crate.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::BitMask;
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::nn::{Backprop, ForwardTrace, Layout, MlpParams};

const MASK_MAGIC: &[u8; 8] = b"OMNMASK1";

fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::config(format!(
            "sparsity must lie in [0, 1), got {sparsity}"
        )));
    }
    Ok(())
}

/// Draws one mask: every maskable bit is kept with probability `1 - sparsity`,
/// every non-maskable bit is forced on.
fn bernoulli_mask<R: Rng + ?Sized>(coverage: &BitMask, sparsity: f64, rng: &mut R) -> BitMask {
    let keep = 1.0 - sparsity;
    let mut mask = BitMask::ones(coverage.len());
    for j in 0..coverage.len() {
        if coverage.get(j) && !rng.gen_bool(keep) {
            mask.set(j, false);
        }
    }
    mask
}

/// `N` frozen binary masks over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    masks: Vec<BitMask>,
    coverage: BitMask,
    sparsity_bits: u64,
    seed: u64,
}

impl MaskSet {
    pub fn count(&self) -> usize {
        self.masks.len()
    }

    pub fn sparsity(&self) -> f64 {
        f64::from_bits(self.sparsity_bits)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Parameter count `n` the masks cover.
    pub fn len(&self) -> usize {
        self.coverage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coverage.is_empty()
    }

    pub fn coverage(&self) -> &BitMask {
        &self.coverage
    }

    pub fn mask(&self, index: usize) -> Result<&BitMask> {
        self.masks.get(index).ok_or(Error::InvalidSubnet {
            index,
            count: self.masks.len(),
        })
    }

    pub fn masks(&self) -> &[BitMask] {
        &self.masks
    }

    /// Header (`n`, `N`, `S`, seed, coverage length), coverage bits, then each
    /// mask's packed bits in index order. All integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.bytes(MASK_MAGIC);
        enc.usize(self.len());
        enc.usize(self.count());
        enc.u64(self.sparsity_bits);
        enc.u64(self.seed);
        enc.usize(self.coverage.len());
        enc.bytes(&self.coverage.to_bytes());
        for m in &self.masks {
            enc.bytes(&m.to_bytes());
        }
        enc.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new("mask set", bytes);
        let set = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(set)
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        let bytes = self.to_bytes();
        enc.usize(bytes.len());
        enc.bytes(&bytes);
    }

    pub(crate) fn decode_framed(dec: &mut Decoder) -> Result<Self> {
        let len = dec.usize()?;
        Self::from_bytes(dec.bytes(len)?)
    }

    fn decode(dec: &mut Decoder) -> Result<Self> {
        dec.expect_magic(MASK_MAGIC)?;
        let n = dec.usize()?;
        let count = dec.usize()?;
        let sparsity_bits = dec.u64()?;
        let seed = dec.u64()?;
        let cov_len = dec.usize()?;
        if cov_len != n {
            return Err(dec.error(format!("coverage length {cov_len} differs from n = {n}")));
        }
        if count == 0 {
            return Err(dec.error("mask count is zero"));
        }
        check_sparsity(f64::from_bits(sparsity_bits))?;
        let n_bytes = n.div_ceil(8);
        let unpack = |dec: &mut Decoder| -> Result<BitMask> {
            let raw = dec.bytes(n_bytes)?;
            BitMask::from_bytes(n, raw).ok_or_else(|| dec.error("stray bits past the end of a mask"))
        };
        let coverage = unpack(dec)?;
        let mut masks = Vec::with_capacity(count);
        for i in 0..count {
            let m = unpack(dec)?;
            let forced_on = (0..n).all(|j| coverage.get(j) || m.get(j));
            if !forced_on {
                return Err(dec.error(format!("mask {i} clears a non-maskable parameter")));
            }
            masks.push(m);
        }
        Ok(Self {
            masks,
            coverage,
            sparsity_bits,
            seed,
        })
    }
}

/// Samples `count` masks for `layout`. Mask `i` comes from its own random stream,
/// so the first `k` masks do not depend on `count`.
pub fn sample_masks(layout: &Layout, count: usize, sparsity: f64, seed: u64) -> Result<MaskSet> {
    sample_masks_with_coverage(layout.coverage(), count, sparsity, seed)
}

pub fn sample_masks_with_coverage(coverage: BitMask, count: usize, sparsity: f64, seed: u64) -> Result<MaskSet> {
    if count < 1 {
        return Err(Error::config("subnet count must be at least 1"));
    }
    check_sparsity(sparsity)?;
    let masks = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            bernoulli_mask(&coverage, sparsity, &mut rng)
        })
        .collect();
    Ok(MaskSet {
        masks,
        coverage,
        sparsity_bits: sparsity.to_bits(),
        seed,
    })
}

/// A fresh mask for the "infinitely many subnets" mode; never stored in a [`MaskSet`].
pub fn infinity_mask<R: Rng + ?Sized>(coverage: &BitMask, sparsity: f64, rng: &mut R) -> Result<BitMask> {
    check_sparsity(sparsity)?;
    Ok(bernoulli_mask(coverage, sparsity, rng))
}

/// `θ ⊙ m` as a plain vector.
pub fn masked_theta(theta: &[f64], mask: &BitMask) -> Result<Vec<f64>> {
    Error::check_len("mask", theta.len(), mask.len())?;
    Ok(theta
        .iter()
        .enumerate()
        .map(|(j, &t)| t * if mask.get(j) { 1.0 } else { 0.0 })
        .collect())
}

/// The subnetwork's parameters `θ ⊙ m`; `params` is left untouched.
pub fn apply_mask(params: &MlpParams, mask: &BitMask) -> Result<MlpParams> {
    params.with_theta(masked_theta(&params.theta, mask)?)
}

/// Forward pass of the subnetwork selected by `mask`, on a batch.
pub fn masked_forward_batch(
    params: &MlpParams,
    mask: &BitMask,
    inputs: ArrayView2<f64>,
) -> Result<(Array2<f64>, ForwardTrace)> {
    let theta = masked_theta(&params.theta, mask)?;
    params.layout().forward_batch(&theta, inputs)
}

pub fn masked_forward(params: &MlpParams, mask: &BitMask, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
    Error::check_len("input", params.layout().input_dim(), x.len())?;
    let input = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let (out, trace) = masked_forward_batch(params, mask, input)?;
    Ok((out.into_raw_vec_and_offset().0, trace))
}

/// Reverse pass through the subnetwork: `m ⊙ ∇_{θ⊙m}`, zero wherever the mask is off.
/// `trace` must come from [`masked_forward_batch`] with the same params and mask.
pub fn masked_backward_batch(
    params: &MlpParams,
    mask: &BitMask,
    trace: &ForwardTrace,
    output_grad: ArrayView2<f64>,
) -> Result<Backprop> {
    let theta = masked_theta(&params.theta, mask)?;
    let mut bp = params.layout().backward_batch(&theta, trace, output_grad)?;
    for (j, g) in bp.params.iter_mut().enumerate() {
        if !mask.get(j) {
            *g = 0.0;
        }
    }
    Ok(bp)
}

pub fn masked_grad(params: &MlpParams, mask: &BitMask, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Vec<f64>> {
    let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
    Ok(masked_backward_batch(params, mask, trace, g)?.params)
}

/// Uniform subnet index draws from a private seeded stream.
#[derive(Debug, Clone)]
pub struct SubnetSelector {
    rng: ChaCha8Rng,
    count: usize,
}

impl SubnetSelector {
    pub fn new(count: usize, seed: u64) -> Result<Self> {
        if count < 1 {
            return Err(Error::config("subnet count must be at least 1"));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            count,
        })
    }

    pub fn from_rng(count: usize, rng: ChaCha8Rng) -> Self {
        Self { rng, count }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Uniform index in `0..count`.
    pub fn draw_index(&mut self) -> usize {
        self.rng.gen_range(0..self.count)
    }

    /// Uniform ordered pair of distinct indices.
    pub fn draw_two_distinct(&mut self) -> Result<(usize, usize)> {
        if self.count < 2 {
            return Err(Error::config(format!(
                "two distinct subnets requested but only {} exist",
                self.count
            )));
        }
        let first = self.rng.gen_range(0..self.count);
        let mut second = self.rng.gen_range(0..self.count - 1);
        if second >= first {
            second += 1;
        }
        Ok((first, second))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, init_params, Activation, LayerSpec, ParamKind};

    fn toy_layout() -> Layout {
        Layout::new(&LayerSpec::stack(3, &[8], 2, Activation::Relu, true)).unwrap()
    }

    #[test]
    fn zero_sparsity_gives_all_ones() {
        let layout = toy_layout();
        let set = sample_masks(&layout, 4, 0.0, 1).unwrap();
        assert!(set.masks().iter().all(|m| m.count_ones() == layout.len()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let layout = toy_layout();
        assert!(sample_masks(&layout, 0, 0.5, 1).is_err());
        assert!(sample_masks(&layout, 3, 1.0, 1).is_err());
        assert!(sample_masks(&layout, 3, -0.1, 1).is_err());
        assert!(infinity_mask(&layout.coverage(), 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn same_seed_same_masks_and_prefix_stability() {
        let layout = toy_layout();
        let a = sample_masks(&layout, 5, 0.5, 42).unwrap();
        assert_eq!(a, sample_masks(&layout, 5, 0.5, 42).unwrap());
        let b = sample_masks(&layout, 2, 0.5, 42).unwrap();
        assert_eq!(&a.masks()[..2], b.masks());
    }

    #[test]
    fn layer_norm_params_never_masked() {
        let layout = toy_layout();
        let set = sample_masks(&layout, 3, 0.9, 5).unwrap();
        for e in layout.entries() {
            if !e.kind.maskable() {
                for m in set.masks() {
                    assert!((e.offset..e.offset + e.len).all(|j| m.get(j)));
                }
            }
        }
    }

    #[test]
    fn apply_mask_definition() {
        let layout = Layout::new(&[LayerSpec::new(1, 1, Activation::Identity, false)]).unwrap();
        let p = MlpParams::from_parts(layout, vec![1.0, 2.0]).unwrap();
        let m = BitMask::from_bools(&[false, true]);
        assert_eq!(apply_mask(&p, &m).unwrap().theta, vec![0.0, 2.0]);
        assert_eq!(apply_mask(&p, &BitMask::ones(2)).unwrap(), p);

        let three = MlpParams::from_parts(
            Layout::new(&[LayerSpec::new(2, 1, Activation::Identity, false)]).unwrap(),
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let m = BitMask::from_bools(&[true, false, true]);
        assert_eq!(apply_mask(&three, &m).unwrap().theta, vec![1.0, 0.0, 3.0]);
        assert!(apply_mask(&three, &BitMask::ones(2)).is_err());
    }

    #[test]
    fn zero_mask_keeps_shared_params() {
        let layout = toy_layout();
        let p = init_params(layout.specs(), 3).unwrap();
        let cov = layout.coverage();
        let mut m = BitMask::ones(p.len());
        for j in 0..p.len() {
            if cov.get(j) {
                m.set(j, false);
            }
        }
        let q = apply_mask(&p, &m).unwrap();
        for j in 0..p.len() {
            if cov.get(j) {
                assert_eq!(q.theta[j], 0.0);
            } else {
                assert_eq!(q.theta[j], p.theta[j]);
            }
        }
    }

    #[test]
    fn masking_the_second_path_of_hand_net() {
        // W1 = [1, 2]ᵀ, W2 = [3, 4]: dropping the weight 2 leaves 3x
        let specs = [
            LayerSpec::new(1, 2, Activation::Identity, false),
            LayerSpec::new(2, 1, Activation::Identity, false),
        ];
        let mut p = init_params(&specs, 0).unwrap();
        p.block_mut(0, ParamKind::Weight).unwrap().copy_from_slice(&[1.0, 2.0]);
        p.block_mut(1, ParamKind::Weight).unwrap().copy_from_slice(&[3.0, 4.0]);
        let mut m = BitMask::ones(p.len());
        m.set(1, false);
        assert_eq!(masked_forward(&p, &m, &[2.0]).unwrap().0, vec![6.0]);
    }

    #[test]
    fn all_ones_mask_matches_dense_paths() {
        let layout = toy_layout();
        let p = init_params(layout.specs(), 9).unwrap();
        let ones = BitMask::ones(p.len());
        let x = [0.3, -0.7, 1.1];
        let (dense, dtrace) = forward(&p, &x).unwrap();
        let (masked, mtrace) = masked_forward(&p, &ones, &x).unwrap();
        assert_eq!(dense, masked);
        let g = [0.4, -1.0];
        assert_eq!(
            crate::nn::backward(&p, &dtrace, &g).unwrap(),
            masked_grad(&p, &ones, &mtrace, &g).unwrap()
        );
    }

    #[test]
    fn masked_out_gradient_is_exactly_zero() {
        let layout = toy_layout();
        let p = init_params(layout.specs(), 2).unwrap();
        let set = sample_masks(&layout, 1, 0.5, 8).unwrap();
        let m = set.mask(0).unwrap();
        let (_, trace) = masked_forward(&p, m, &[0.5, 0.1, -0.2]).unwrap();
        let g = masked_grad(&p, m, &trace, &[1.0, 1.0]).unwrap();
        for (j, gj) in g.iter().enumerate() {
            if !m.get(j) {
                assert_eq!(gj.to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn selector_single_subnet() {
        let mut sel = SubnetSelector::new(1, 3).unwrap();
        assert!((0..100).all(|_| sel.draw_index() == 0));
        assert!(sel.draw_two_distinct().is_err());
    }

    #[test]
    fn selector_two_subnets_always_both() {
        let mut sel = SubnetSelector::new(2, 3).unwrap();
        for _ in 0..200 {
            let (a, b) = sel.draw_two_distinct().unwrap();
            assert_eq!(a + b, 1);
        }
    }

    #[test]
    fn selector_is_reproducible() {
        let mut a = SubnetSelector::new(5, 77).unwrap();
        let mut b = SubnetSelector::new(5, 77).unwrap();
        let xs: Vec<_> = (0..50).map(|_| a.draw_index()).collect();
        let ys: Vec<_> = (0..50).map(|_| b.draw_index()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn index_frequencies_are_uniform() {
        let mut sel = SubnetSelector::new(5, 2024).unwrap();
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sel.draw_index()] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.2).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn pair_frequencies_are_uniform() {
        let mut sel = SubnetSelector::new(5, 11).unwrap();
        let mut counts = [[0usize; 5]; 5];
        let draws = 200_000;
        for _ in 0..draws {
            let (a, b) = sel.draw_two_distinct().unwrap();
            assert_ne!(a, b);
            counts[a][b] += 1;
        }
        // 20 ordered pairs, p = 1/20: sd of the frequency ≈ 4.9e-4, allow ~5 sd
        for (a, row) in counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                if a != b {
                    let f = c as f64 / draws as f64;
                    assert!((f - 0.05).abs() < 0.0025, "pair ({a},{b}) frequency {f}");
                }
            }
        }
    }

    #[test]
    fn infinity_masks_differ_between_calls() {
        let cov = BitMask::ones(10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = infinity_mask(&cov, 0.5, &mut rng).unwrap();
        let b = infinity_mask(&cov, 0.5, &mut rng).unwrap();
        assert_ne!(a, b);
        let density = a.count_ones() as f64 / 10_000.0;
        assert!((density - 0.5).abs() < 0.03);
        assert_eq!(infinity_mask(&cov, 0.0, &mut rng).unwrap().count_ones(), 10_000);
    }

    #[test]
    fn serialization_roundtrip_is_byte_exact() {
        let layout = toy_layout();
        let set = sample_masks(&layout, 3, 0.3, 17).unwrap();
        let bytes = set.to_bytes();
        let back = MaskSet::from_bytes(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_bytes(), bytes);
        // header: magic + five u64 fields
        assert_eq!(bytes.len(), 8 + 5 * 8 + 4 * layout.len().div_ceil(8));
    }

    #[test]
    fn corrupted_mask_file_is_rejected() {
        let layout = toy_layout();
        let mut bytes = sample_masks(&layout, 2, 0.3, 17).unwrap().to_bytes();
        bytes.pop();
        assert!(MaskSet::from_bytes(&bytes).is_err());
        let mut bytes = sample_masks(&layout, 2, 0.3, 17).unwrap().to_bytes();
        bytes[0] = b'X';
        assert!(MaskSet::from_bytes(&bytes).is_err());
    }
}
