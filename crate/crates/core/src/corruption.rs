//! Training-example corruption: BERT 80/10/10 masking, the subset-loss
//! ablation, and random token substitution (RTS).

use rand::seq::index;
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{self, TokenSequence, MASK, NUM_SPECIALS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Masked-token reconstruction.
    Mlm,
    /// Per-token "was this substituted?" classification.
    Rts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub objective: Objective,
    pub replace_mask_frac: f64,
    pub replace_random_frac: f64,
    pub keep_frac: f64,
    /// When set, the MLM loss only covers this fraction of the maskable tokens.
    #[serde(default)]
    pub subset_loss_fraction: Option<f64>,
    pub min_masked: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Mlm,
            replace_mask_frac: 0.8,
            replace_random_frac: 0.1,
            keep_frac: 0.1,
            subset_loss_fraction: None,
            min_masked: 1,
        }
    }
}

impl CorruptionConfig {
    pub fn rts() -> Self {
        Self {
            objective: Objective::Rts,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.replace_mask_frac, self.replace_random_frac, self.keep_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument("replacement fractions must lie in [0,1]".into()));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("replacement fractions must sum to 1".into()));
        }
        if let Some(f) = self.subset_loss_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument("subset_loss_fraction must lie in (0,1]".into()));
            }
            if self.objective == Objective::Rts {
                return Err(Error::InvalidArgument(
                    "subset loss applies to the mlm objective only".into(),
                ));
            }
        }
        Ok(())
    }
}

/// What happened to one masked position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// One corrupted sequence and its loss targets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskOutcome {
    pub original: TokenSequence,
    pub corrupted: Vec<u32>,
    /// Sorted corrupted positions (MLM mask set, or RTS substituted positions).
    pub mask_set: Vec<usize>,
    /// Sorted positions the loss is computed over.
    pub loss_set: Vec<usize>,
    /// MLM: original id at each `loss_set` position. RTS: 1 if substituted, else 0.
    pub labels: Vec<u32>,
    /// Aligned with `mask_set`.
    pub actions: Vec<MaskAction>,
}

impl MaskOutcome {
    fn clean(seq: &TokenSequence) -> Self {
        Self {
            original: seq.clone(),
            corrupted: seq.ids.clone(),
            mask_set: Vec::new(),
            loss_set: Vec::new(),
            labels: Vec::new(),
            actions: Vec::new(),
        }
    }
}

/// Include each maskable index independently with probability `rate`.
///
/// Draws smaller than `min_masked` are topped up with uniformly chosen
/// maskable indices.
pub fn sample_mask(maskable: &[usize], rate: f64, min_masked: usize, rng: &mut impl RngCore) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("masking rate {rate} outside [0,1]")));
    }
    if maskable.is_empty() {
        return if rate > 0.0 {
            Err(Error::NothingToMask)
        } else {
            Ok(Vec::new())
        };
    }
    let mut chosen: Vec<bool> = maskable.iter().map(|_| rng.random::<f64>() < rate).collect();
    let mut count = chosen.iter().filter(|&&c| c).count();
    let want = min_masked.min(maskable.len());
    while count < want {
        let k = rng.random_range(0..maskable.len());
        if !chosen[k] {
            chosen[k] = true;
            count += 1;
        }
    }
    let mut out: Vec<usize> = maskable
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(&i, _)| i)
        .collect();
    out.sort_unstable();
    Ok(out)
}

fn random_regular_id(vocab_size: usize, rng: &mut impl RngCore) -> u32 {
    rng.random_range(NUM_SPECIALS..vocab_size as u32)
}

/// Apply the 80/10/10 rule independently at every position of `mask`.
/// The loss covers the whole mask set.
pub fn apply_bert_corruption(
    seq: &TokenSequence,
    mask: &[usize],
    vocab_size: usize,
    cfg: &CorruptionConfig,
    rng: &mut impl RngCore,
) -> Result<MaskOutcome> {
    let mut out = MaskOutcome::clean(seq);
    let has_regular = vocab_size > NUM_SPECIALS as usize;
    for &m in mask {
        match seq.ids.get(m) {
            Some(&id) if !data::is_special(id) => {}
            _ => {
                return Err(Error::InvalidArgument(format!("position {m} is not maskable")));
            }
        }
        let u = rng.random::<f64>();
        let action = if u < cfg.replace_mask_frac {
            out.corrupted[m] = MASK;
            MaskAction::Mask
        } else if u < cfg.replace_mask_frac + cfg.replace_random_frac && has_regular {
            out.corrupted[m] = random_regular_id(vocab_size, rng);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        out.actions.push(action);
    }
    out.mask_set = mask.to_vec();
    out.loss_set = mask.to_vec();
    out.labels = mask.iter().map(|&m| seq.ids[m]).collect();
    Ok(out)
}

/// Number of loss positions kept by the subset ablation when `mask_len`
/// positions are masked out of `maskable_count`.
pub fn subset_loss_size(mask_len: usize, maskable_count: usize, target_fraction: f64) -> usize {
    let target = (target_fraction * maskable_count as f64).round() as usize;
    mask_len.min(target)
}

/// Uniformly random subset of `mask` sized by [`subset_loss_size`].
pub fn subset_loss_indices(
    mask: &[usize],
    maskable_count: usize,
    target_fraction: f64,
    rng: &mut impl RngCore,
) -> Vec<usize> {
    let k = subset_loss_size(mask.len(), maskable_count, target_fraction);
    if k >= mask.len() {
        return mask.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, mask.len(), k).into_iter().map(|j| mask[j]).collect();
    picked.sort_unstable();
    picked
}

/// Substitute each maskable token with probability `rate` by a different
/// regular token. Every maskable position is labelled.
pub fn apply_rts(seq: &TokenSequence, rate: f64, vocab_size: usize, rng: &mut impl RngCore) -> Result<MaskOutcome> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "substitution rate {rate} outside [0,1]"
        )));
    }
    let regular = vocab_size.saturating_sub(NUM_SPECIALS as usize);
    if regular < 2 {
        return Err(Error::CannotSubstitute);
    }
    let mut out = MaskOutcome::clean(seq);
    for i in seq.maskable() {
        let substituted = rng.random::<f64>() < rate;
        if substituted {
            let orig = seq.ids[i];
            // Draw from the regular ids minus the original.
            let mut id = NUM_SPECIALS + rng.random_range(0..(regular - 1) as u32);
            if id >= orig {
                id += 1;
            }
            out.corrupted[i] = id;
            out.mask_set.push(i);
            out.actions.push(MaskAction::Random);
        }
        out.loss_set.push(i);
        out.labels.push(substituted as u32);
    }
    Ok(out)
}

/// Subset-loss selection pooled over a batch: keep a uniformly random
/// `subset_loss_size` positions of the union of the rows' mask sets, sized
/// against the batch's total maskable count. Rows may end up with no loss
/// positions; the batch as a whole has at least one whenever anything is
/// masked and the target rounds to at least one.
pub fn subset_loss_batch(outcomes: &mut [MaskOutcome], target_fraction: f64, rng: &mut impl RngCore) {
    let pooled: Vec<(usize, usize)> = outcomes
        .iter()
        .enumerate()
        .flat_map(|(r, o)| o.mask_set.iter().map(move |&m| (r, m)))
        .collect();
    let maskable: usize = outcomes.iter().map(|o| o.original.maskable().len()).sum();
    let k = subset_loss_size(pooled.len(), maskable, target_fraction);
    let mut keep = vec![Vec::new(); outcomes.len()];
    if k >= pooled.len() {
        for &(r, m) in &pooled {
            keep[r].push(m);
        }
    } else {
        for j in index::sample(rng, pooled.len(), k) {
            let (r, m) = pooled[j];
            keep[r].push(m);
        }
    }
    for (o, mut ks) in outcomes.iter_mut().zip(keep) {
        ks.sort_unstable();
        o.labels = ks.iter().map(|&m| o.original.ids[m]).collect();
        o.loss_set = ks;
    }
}

/// Corrupt one sequence at `rate` according to `cfg`.
pub fn corrupt(
    seq: &TokenSequence,
    rate: f64,
    vocab_size: usize,
    cfg: &CorruptionConfig,
    rng: &mut impl RngCore,
) -> Result<MaskOutcome> {
    match cfg.objective {
        Objective::Rts => apply_rts(seq, rate, vocab_size, rng),
        Objective::Mlm => {
            let maskable = seq.maskable();
            let mask = sample_mask(&maskable, rate, cfg.min_masked, rng)?;
            let mut out = apply_bert_corruption(seq, &mask, vocab_size, cfg, rng)?;
            if let Some(frac) = cfg.subset_loss_fraction {
                out.loss_set = subset_loss_indices(&out.mask_set, maskable.len(), frac, rng);
                out.labels = out.loss_set.iter().map(|&m| seq.ids[m]).collect();
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CLS, PAD, SEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn seq(n: usize, vocab: u32) -> TokenSequence {
        let mut ids = vec![CLS];
        ids.extend((0..n).map(|i| NUM_SPECIALS + (i as u32 % (vocab - NUM_SPECIALS))));
        ids.push(SEP);
        TokenSequence { ids }
    }

    #[test]
    fn rate_zero_and_one() {
        let maskable: Vec<usize> = (1..=10).collect();
        assert!(sample_mask(&maskable, 0.0, 0, &mut rng(1)).unwrap().is_empty());
        assert_eq!(sample_mask(&maskable, 1.0, 0, &mut rng(1)).unwrap(), maskable);
    }

    #[test]
    fn empty_draw_is_topped_up() {
        let maskable: Vec<usize> = (1..=10).collect();
        for s in 0..50 {
            let m = sample_mask(&maskable, 0.0, 1, &mut rng(s)).unwrap();
            assert_eq!(m.len(), 1);
            assert!(maskable.contains(&m[0]));
        }
    }

    #[test]
    fn nothing_to_mask() {
        assert!(matches!(
            sample_mask(&[], 0.3, 1, &mut rng(0)),
            Err(Error::NothingToMask)
        ));
        assert!(sample_mask(&[], 0.0, 1, &mut rng(0)).unwrap().is_empty());
    }

    #[test]
    fn empty_mask_leaves_sequence_unchanged() {
        let s = seq(6, 20);
        let out = apply_bert_corruption(&s, &[], 20, &CorruptionConfig::default(), &mut rng(0)).unwrap();
        assert_eq!(out.corrupted, s.ids);
        assert!(out.loss_set.is_empty());
    }

    #[test]
    fn corruption_only_touches_mask_set() {
        let s = seq(30, 40);
        let cfg = CorruptionConfig::default();
        for seed in 0..100 {
            let out = corrupt(&s, 0.4, 40, &cfg, &mut rng(seed)).unwrap();
            for i in 0..s.len() {
                if !out.mask_set.contains(&i) {
                    assert_eq!(out.corrupted[i], s.ids[i]);
                }
            }
            assert_eq!(out.corrupted[0], CLS);
            assert_eq!(*out.corrupted.last().unwrap(), SEP);
            assert_eq!(out.loss_set, out.mask_set);
            for (&m, &l) in out.loss_set.iter().zip(&out.labels) {
                assert_eq!(s.ids[m], l);
            }
        }
    }

    #[test]
    fn random_replacements_are_regular_tokens() {
        let s = seq(50, 12);
        let cfg = CorruptionConfig {
            replace_mask_frac: 0.0,
            replace_random_frac: 1.0,
            keep_frac: 0.0,
            ..CorruptionConfig::default()
        };
        for seed in 0..200 {
            let out = corrupt(&s, 1.0, 12, &cfg, &mut rng(seed)).unwrap();
            for &m in &out.mask_set {
                assert!(!data::is_special(out.corrupted[m]));
            }
        }
    }

    #[test]
    fn rejects_unmaskable_positions() {
        let s = seq(3, 10);
        let cfg = CorruptionConfig::default();
        assert!(apply_bert_corruption(&s, &[0], 10, &cfg, &mut rng(0)).is_err());
        assert!(apply_bert_corruption(&s, &[9], 10, &cfg, &mut rng(0)).is_err());
    }

    #[test]
    fn subset_sizes() {
        let mask: Vec<usize> = (0..30).collect();
        let sub = subset_loss_indices(&mask, 100, 0.15, &mut rng(0));
        assert_eq!(sub.len(), 15);
        assert!(sub.windows(2).all(|w| w[0] < w[1]));
        assert!(sub.iter().all(|i| mask.contains(i)));

        let small: Vec<usize> = (0..10).collect();
        assert_eq!(subset_loss_indices(&small, 100, 0.15, &mut rng(0)), small);
        assert_eq!(subset_loss_indices(&mask, 100, 1.0, &mut rng(0)), mask);
    }

    #[test]
    fn batch_subset_respects_pooled_cap() {
        let plain = CorruptionConfig::default();
        for trial in 0..50u64 {
            let mut outs: Vec<MaskOutcome> = (0..4)
                .map(|r| corrupt(&seq(10 + r, 50), 0.3, 50, &plain, &mut rng(trial * 10 + r as u64)).unwrap())
                .collect();
            let masked: usize = outs.iter().map(|o| o.mask_set.len()).sum();
            let maskable: usize = outs.iter().map(|o| o.original.maskable().len()).sum();
            subset_loss_batch(&mut outs, 0.15, &mut rng(trial));
            let kept: usize = outs.iter().map(|o| o.loss_set.len()).sum();
            let cap = (0.15 * maskable as f64).round() as usize;
            assert_eq!(kept, masked.min(cap));
            for o in &outs {
                assert!(o.loss_set.iter().all(|i| o.mask_set.contains(i)));
                assert_eq!(o.labels.len(), o.loss_set.len());
                for (&i, &l) in o.loss_set.iter().zip(&o.labels) {
                    assert_eq!(o.original.ids[i], l);
                }
            }
        }
    }

    #[test]
    fn subset_mode_keeps_mask_but_trims_loss() {
        let s = seq(100, 200);
        let cfg = CorruptionConfig {
            subset_loss_fraction: Some(0.15),
            ..CorruptionConfig::default()
        };
        let out = corrupt(&s, 0.3, 200, &cfg, &mut rng(4)).unwrap();
        assert!(out.mask_set.len() > 15);
        assert_eq!(out.loss_set.len(), 15);
        assert!(out.loss_set.iter().all(|i| out.mask_set.contains(i)));
    }

    #[test]
    fn rts_extremes() {
        let s = seq(20, 30);
        let zero = apply_rts(&s, 0.0, 30, &mut rng(0)).unwrap();
        assert_eq!(zero.corrupted, s.ids);
        assert!(zero.labels.iter().all(|&l| l == 0));
        assert_eq!(zero.loss_set, s.maskable());

        let one = apply_rts(&s, 1.0, 7, &mut rng(0)).unwrap();
        for (&i, &l) in one.loss_set.iter().zip(&one.labels) {
            assert_eq!(l, 1);
            assert_ne!(one.corrupted[i], s.ids[i]);
            assert!(!data::is_special(one.corrupted[i]));
        }
    }

    #[test]
    fn rts_needs_two_regular_tokens() {
        let s = TokenSequence { ids: vec![CLS, 5, SEP] };
        assert!(matches!(
            apply_rts(&s, 0.5, 6, &mut rng(0)),
            Err(Error::CannotSubstitute)
        ));
    }

    #[test]
    fn corruption_is_deterministic() {
        let s = seq(40, 50);
        let cfg = CorruptionConfig::default();
        let a = corrupt(&s, 0.3, 50, &cfg, &mut rng(9)).unwrap();
        let b = corrupt(&s, 0.3, 50, &cfg, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn padding_is_never_maskable() {
        let s = TokenSequence {
            ids: vec![CLS, 7, SEP, PAD, PAD],
        };
        assert_eq!(s.maskable(), vec![1]);
    }

    #[test]
    fn config_validation() {
        assert!(CorruptionConfig::default().validate().is_ok());
        let bad = CorruptionConfig {
            keep_frac: 0.2,
            ..CorruptionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CorruptionConfig {
            subset_loss_fraction: Some(0.0),
            ..CorruptionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
