//! Subnet strategies: how a value or policy network picks the parameter view it
//! trains, bootstraps from, and acts with.
//!
//! Every variant implements [`SubnetStrategy`] and is registered by name in a
//! [`StrategyRegistry`]; agents resolve their critic and actor strategies from
//! configuration at construction time.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitMask;
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::mask::{infinity_mask, sample_masks_with_coverage, MaskSet, SubnetSelector};
use crate::nn::Layout;

/// Which parameter view a member evaluates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskRef {
    /// The full dense network.
    Dense,
    /// Subnet `i` of the strategy's frozen mask set.
    Fixed(usize),
    /// A one-off mask that is not kept.
    Fresh(BitMask),
}

/// One (network, mask) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub network: usize,
    pub mask: MaskRef,
}

impl Member {
    pub fn dense(network: usize) -> Self {
        Self {
            network,
            mask: MaskRef::Dense,
        }
    }

    pub fn subnet(index: usize) -> Self {
        Self {
            network: 0,
            mask: MaskRef::Fixed(index),
        }
    }

    /// Fixed subnet index, if any.
    pub fn subnet_index(&self) -> Option<usize> {
        match self.mask {
            MaskRef::Fixed(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Critic,
    Actor,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Critic => f.write_str("critic"),
            Role::Actor => f.write_str("actor"),
        }
    }
}

pub trait SubnetStrategy: Send + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Number of independent parameter vectors this strategy needs.
    fn network_count(&self) -> usize;

    /// Frozen masks, when the strategy has them.
    fn mask_set(&self) -> Option<&MaskSet> {
        None
    }

    /// Addressable subnets for per-subnet evaluation.
    fn subnet_count(&self) -> Option<usize> {
        None
    }

    /// Whether acting draws a new view at every call rather than once per episode.
    fn resample_per_call(&self) -> bool {
        false
    }

    /// Members trained by one update step.
    fn update_members(&mut self) -> Vec<Member>;

    /// Members whose minimum forms the bootstrap estimate.
    fn target_members(&mut self) -> Vec<Member>;

    /// One randomly chosen member (episode policy, next-action policy).
    fn sample_member(&mut self) -> Member;

    /// Members averaged when the value estimate feeds the policy loss.
    fn average_members(&mut self) -> Vec<Member>;

    /// Like [`SubnetStrategy::sample_member`] but drawing from a caller-owned rng,
    /// leaving the strategy's own stream untouched.
    fn sample_member_with(&self, rng: &mut ChaCha8Rng) -> Member {
        match self.subnet_count() {
            Some(n) => Member::subnet(rng.gen_range(0..n)),
            None => Member::dense(0),
        }
    }

    /// Like [`SubnetStrategy::average_members`] with a caller-owned rng.
    fn average_members_with(&self, _rng: &mut ChaCha8Rng) -> Vec<Member> {
        match self.subnet_count() {
            Some(n) => (0..n).map(Member::subnet).collect(),
            None => (0..self.network_count()).map(Member::dense).collect(),
        }
    }

    /// Member for a specific subnet index.
    fn member_for_subnet(&self, index: usize) -> Result<Member> {
        match self.subnet_count() {
            Some(n) if index < n => Ok(Member::subnet(index)),
            Some(n) => Err(Error::InvalidSubnet { index, count: n }),
            None => Err(Error::InvalidSubnet { index, count: 0 }),
        }
    }

    fn encode_state(&self, enc: &mut Encoder);

    fn decode_state(&mut self, dec: &mut Decoder) -> Result<()>;

    /// Mask for `member`; `None` means every parameter is active.
    fn resolve<'a>(&'a self, member: &'a Member) -> Result<Option<&'a BitMask>> {
        match &member.mask {
            MaskRef::Dense => Ok(None),
            MaskRef::Fresh(m) => Ok(Some(m)),
            MaskRef::Fixed(i) => {
                let set = self.mask_set().ok_or(Error::InvalidSubnet { index: *i, count: 0 })?;
                set.mask(*i).map(Some)
            }
        }
    }
}

/// Mode selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub kind: String,
    #[serde(default = "default_subnets")]
    pub subnets: usize,
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
}

fn default_subnets() -> usize {
    5
}

fn default_sparsity() -> f64 {
    0.5
}

impl ModeSpec {
    pub fn omnet(subnets: usize, sparsity: f64) -> Self {
        Self {
            kind: "omnet".into(),
            subnets,
            sparsity,
        }
    }

    pub fn infinity(sparsity: f64) -> Self {
        Self {
            kind: "infinity".into(),
            subnets: default_subnets(),
            sparsity,
        }
    }

    pub fn named(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            subnets: default_subnets(),
            sparsity: default_sparsity(),
        }
    }
}

/// Inputs a strategy builder may draw on.
pub struct BuildContext<'a> {
    pub layout: &'a Layout,
    pub spec: &'a ModeSpec,
    pub mask_seed: u64,
    pub selector_seed: u64,
}

pub type StrategyBuilder = fn(&BuildContext) -> Result<Box<dyn SubnetStrategy>>;

struct Entry {
    name: &'static str,
    roles: &'static [Role],
    build: StrategyBuilder,
}

/// Named strategy constructors.
pub struct StrategyRegistry {
    entries: Vec<Entry>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("omnet", &[Role::Critic, Role::Actor], OmnetStrategy::build);
        reg.register("infinity", &[Role::Critic, Role::Actor], InfinityStrategy::build);
        reg.register("dense_single", &[Role::Critic], DenseStrategy::build_single);
        reg.register("dense_double", &[Role::Critic], DenseStrategy::build_double);
        reg.register("dense", &[Role::Actor], DenseStrategy::build_single);
        reg
    }

    /// Adds or replaces a strategy.
    pub fn register(&mut self, name: &'static str, roles: &'static [Role], build: StrategyBuilder) {
        self.entries.retain(|e| e.name != name);
        self.entries.push(Entry { name, roles, build });
    }

    pub fn names(&self, role: Role) -> Vec<&'static str> {
        self.entries
            .iter()
            .filter(|e| e.roles.contains(&role))
            .map(|e| e.name)
            .collect()
    }

    pub fn build(&self, role: Role, ctx: &BuildContext) -> Result<Box<dyn SubnetStrategy>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name == ctx.spec.kind)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown {role} mode `{}` (known: {})",
                    ctx.spec.kind,
                    self.names(role).join(", ")
                ))
            })?;
        if !entry.roles.contains(&role) {
            return Err(Error::config(format!(
                "mode `{}` cannot be used for the {role}",
                entry.name
            )));
        }
        (entry.build)(ctx)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// `N` frozen overlapping subnets inside one network.
#[derive(Debug)]
pub struct OmnetStrategy {
    masks: MaskSet,
    selector: SubnetSelector,
}

impl OmnetStrategy {
    pub fn new(masks: MaskSet, selector_seed: u64) -> Result<Self> {
        let selector = SubnetSelector::new(masks.count(), selector_seed)?;
        Ok(Self { masks, selector })
    }

    fn build(ctx: &BuildContext) -> Result<Box<dyn SubnetStrategy>> {
        let masks = sample_masks_with_coverage(
            ctx.layout.coverage(),
            ctx.spec.subnets,
            ctx.spec.sparsity,
            ctx.mask_seed,
        )?;
        Ok(Box::new(Self::new(masks, ctx.selector_seed)?))
    }
}

impl SubnetStrategy for OmnetStrategy {
    fn name(&self) -> &'static str {
        "omnet"
    }

    fn network_count(&self) -> usize {
        1
    }

    fn mask_set(&self) -> Option<&MaskSet> {
        Some(&self.masks)
    }

    fn subnet_count(&self) -> Option<usize> {
        Some(self.masks.count())
    }

    fn update_members(&mut self) -> Vec<Member> {
        vec![Member::subnet(self.selector.draw_index())]
    }

    fn target_members(&mut self) -> Vec<Member> {
        // a single subnet has no distinct partner: plain bootstrap
        match self.selector.draw_two_distinct() {
            Ok((a, b)) => vec![Member::subnet(a), Member::subnet(b)],
            Err(_) => vec![Member::subnet(0)],
        }
    }

    fn sample_member(&mut self) -> Member {
        Member::subnet(self.selector.draw_index())
    }

    fn average_members(&mut self) -> Vec<Member> {
        (0..self.masks.count()).map(Member::subnet).collect()
    }

    fn encode_state(&self, enc: &mut Encoder) {
        self.masks.encode(enc);
        enc.rng(self.selector.rng());
    }

    fn decode_state(&mut self, dec: &mut Decoder) -> Result<()> {
        let masks = MaskSet::decode_framed(dec)?;
        if masks != self.masks {
            return Err(dec.error("stored mask set differs from the configured one"));
        }
        *self.selector.rng_mut() = dec.rng()?;
        Ok(())
    }
}

/// Plain dense networks: one (Sin-SAC style) or two with clipped double Q.
#[derive(Debug)]
pub struct DenseStrategy {
    networks: usize,
}

impl DenseStrategy {
    pub fn new(networks: usize) -> Self {
        assert!(networks >= 1);
        Self { networks }
    }

    fn build_single(_: &BuildContext) -> Result<Box<dyn SubnetStrategy>> {
        Ok(Box::new(Self::new(1)))
    }

    fn build_double(_: &BuildContext) -> Result<Box<dyn SubnetStrategy>> {
        Ok(Box::new(Self::new(2)))
    }

    fn all(&self) -> Vec<Member> {
        (0..self.networks).map(Member::dense).collect()
    }
}

impl SubnetStrategy for DenseStrategy {
    fn name(&self) -> &'static str {
        if self.networks == 1 {
            "dense_single"
        } else {
            "dense_double"
        }
    }

    fn network_count(&self) -> usize {
        self.networks
    }

    fn update_members(&mut self) -> Vec<Member> {
        self.all()
    }

    fn target_members(&mut self) -> Vec<Member> {
        self.all()
    }

    fn sample_member(&mut self) -> Member {
        Member::dense(0)
    }

    fn average_members(&mut self) -> Vec<Member> {
        self.all()
    }

    fn encode_state(&self, enc: &mut Encoder) {
        enc.usize(self.networks);
    }

    fn decode_state(&mut self, dec: &mut Decoder) -> Result<()> {
        if dec.usize()? != self.networks {
            return Err(dec.error("dense network count differs from configuration"));
        }
        Ok(())
    }
}

/// Fresh Bernoulli mask at every update and every forward.
#[derive(Debug)]
pub struct InfinityStrategy {
    coverage: BitMask,
    sparsity: f64,
    rng: ChaCha8Rng,
}

/// Fresh masks averaged for the policy's value estimate.
pub const INFINITY_AVERAGE_DRAWS: usize = 2;

impl InfinityStrategy {
    pub fn new(coverage: BitMask, sparsity: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&sparsity) {
            return Err(Error::config(format!("sparsity must lie in [0, 1), got {sparsity}")));
        }
        Ok(Self {
            coverage,
            sparsity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn build(ctx: &BuildContext) -> Result<Box<dyn SubnetStrategy>> {
        Ok(Box::new(Self::new(
            ctx.layout.coverage(),
            ctx.spec.sparsity,
            ctx.selector_seed,
        )?))
    }

    fn fresh(&mut self) -> Member {
        fresh_member(&self.coverage, self.sparsity, &mut self.rng)
    }
}

fn fresh_member(coverage: &BitMask, sparsity: f64, rng: &mut ChaCha8Rng) -> Member {
    let mask = infinity_mask(coverage, sparsity, rng).expect("sparsity validated");
    Member {
        network: 0,
        mask: MaskRef::Fresh(mask),
    }
}

impl SubnetStrategy for InfinityStrategy {
    fn name(&self) -> &'static str {
        "infinity"
    }

    fn network_count(&self) -> usize {
        1
    }

    fn resample_per_call(&self) -> bool {
        true
    }

    fn update_members(&mut self) -> Vec<Member> {
        vec![self.fresh()]
    }

    fn target_members(&mut self) -> Vec<Member> {
        vec![self.fresh(), self.fresh()]
    }

    fn sample_member(&mut self) -> Member {
        self.fresh()
    }

    fn average_members(&mut self) -> Vec<Member> {
        (0..INFINITY_AVERAGE_DRAWS).map(|_| self.fresh()).collect()
    }

    fn sample_member_with(&self, rng: &mut ChaCha8Rng) -> Member {
        fresh_member(&self.coverage, self.sparsity, rng)
    }

    fn average_members_with(&self, rng: &mut ChaCha8Rng) -> Vec<Member> {
        (0..INFINITY_AVERAGE_DRAWS)
            .map(|_| fresh_member(&self.coverage, self.sparsity, rng))
            .collect()
    }

    fn encode_state(&self, enc: &mut Encoder) {
        enc.f64(self.sparsity);
        enc.rng(&self.rng);
    }

    fn decode_state(&mut self, dec: &mut Decoder) -> Result<()> {
        if dec.f64()?.to_bits() != self.sparsity.to_bits() {
            return Err(dec.error("infinity sparsity differs from configuration"));
        }
        self.rng = dec.rng()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};

    fn layout() -> Layout {
        Layout::new(&LayerSpec::stack(4, &[16, 16], 1, Activation::Relu, true)).unwrap()
    }

    fn build(role: Role, spec: ModeSpec) -> Result<Box<dyn SubnetStrategy>> {
        let layout = layout();
        StrategyRegistry::with_builtins().build(
            role,
            &BuildContext {
                layout: &layout,
                spec: &spec,
                mask_seed: 1,
                selector_seed: 2,
            },
        )
    }

    #[test]
    fn registry_resolves_builtins_by_role() {
        let reg = StrategyRegistry::with_builtins();
        assert_eq!(reg.names(Role::Critic), vec!["omnet", "infinity", "dense_single", "dense_double"]);
        assert_eq!(reg.names(Role::Actor), vec!["omnet", "infinity", "dense"]);
        assert_eq!(build(Role::Critic, ModeSpec::named("dense_double")).unwrap().network_count(), 2);
        assert!(build(Role::Actor, ModeSpec::named("dense_double")).is_err());
        assert!(build(Role::Critic, ModeSpec::named("redq")).is_err());
    }

    #[test]
    fn omnet_target_pair_is_distinct() {
        let mut s = build(Role::Critic, ModeSpec::omnet(5, 0.5)).unwrap();
        for _ in 0..500 {
            let t = s.target_members();
            assert_eq!(t.len(), 2);
            assert_ne!(t[0], t[1]);
        }
        assert_eq!(s.average_members().len(), 5);
    }

    #[test]
    fn single_subnet_bootstraps_from_itself() {
        let mut s = build(Role::Critic, ModeSpec::omnet(1, 0.0)).unwrap();
        assert_eq!(s.target_members(), vec![Member::subnet(0)]);
    }

    #[test]
    fn subnet_lookup_validates_index() {
        let s = build(Role::Actor, ModeSpec::omnet(3, 0.5)).unwrap();
        assert!(s.member_for_subnet(2).is_ok());
        assert!(matches!(s.member_for_subnet(3), Err(Error::InvalidSubnet { index: 3, count: 3 })));
        let d = build(Role::Actor, ModeSpec::named("dense")).unwrap();
        assert!(d.member_for_subnet(0).is_err());
    }

    #[test]
    fn infinity_never_repeats_masks() {
        let mut s = build(Role::Critic, ModeSpec::infinity(0.5)).unwrap();
        let a = s.update_members();
        let b = s.update_members();
        assert_ne!(a, b);
        assert!(s.mask_set().is_none());
        assert!(s.resample_per_call());
    }

    #[test]
    fn state_roundtrip_restores_draws() {
        let mut s = build(Role::Critic, ModeSpec::omnet(5, 0.5)).unwrap();
        for _ in 0..7 {
            s.update_members();
        }
        let mut enc = Encoder::new();
        s.encode_state(&mut enc);
        let bytes = enc.into_bytes();
        let mut t = build(Role::Critic, ModeSpec::omnet(5, 0.5)).unwrap();
        t.decode_state(&mut Decoder::new("state", &bytes)).unwrap();
        for _ in 0..20 {
            assert_eq!(s.update_members(), t.update_members());
        }
    }
}
