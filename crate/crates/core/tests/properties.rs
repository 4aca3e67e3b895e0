//! Property tests of the building blocks: tensors, data, models, protocol
//! containers and scheme primitives.

use morarena::data::{gen_blobs, sample_ood, split_disjoint, Truth};
use morarena::models::{argmax, train, MlpClassifier, TrainConfig};
use morarena::protocol::claim::{OwnershipClaim, SchemeKind, TriggerSet};
use morarena::protocol::thresholds::{DecisionThresholds, ThresholdKind};
use morarena::schemes::dawn::{dawn_mu, dawn_pi, LEVELS};
use morarena::schemes::di::di_embed;
use morarena::schemes::DiConfig;
use morarena::tensor::{clip_to_ball, sign, Bounds, Graph, Tensor};
use proptest::prelude::*;

fn vec_in(lo: f64, hi: f64, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn clip_stays_in_ball_and_box(
        anchor in vec_in(0.0, 1.0, 6),
        candidate in vec_in(-1.0, 2.0, 6),
        eps in 0.0f64..0.5,
    ) {
        let a = Tensor::new(vec![1, 6], anchor).unwrap();
        let c = Tensor::new(vec![1, 6], candidate).unwrap();
        let clipped = clip_to_ball(&c, &a, eps, &Bounds::unit()).unwrap();
        prop_assert!(clipped.linf_distance(&a) <= eps);
        prop_assert!(clipped.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let twice = clip_to_ball(&clipped, &a, eps, &Bounds::unit()).unwrap();
        prop_assert_eq!(twice, clipped);
    }
}

proptest! {
    #[test]
    fn sign_is_odd(values in vec_in(-10.0, 10.0, 8)) {
        let t = Tensor::new(vec![8], values.clone()).unwrap();
        let neg = Tensor::new(vec![8], values.iter().map(|v| -v).collect()).unwrap();
        let s = sign(&t);
        let sn = sign(&neg);
        for (a, b) in s.data().iter().zip(sn.data()) {
            prop_assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn forward_and_gradients_are_deterministic(seed in any::<u64>(), x in vec_in(0.0, 1.0, 8)) {
        let m = MlpClassifier::init(&[4, 5, 3], seed, 0.1).unwrap();
        let xt = Tensor::new(vec![2, 4], x).unwrap();
        let run = || {
            let mut g = Graph::new();
            let xv = g.leaf(xt.clone());
            let logits = m.logits_var(&mut g, xv).unwrap();
            let loss = g.softmax_xent(logits, &[0, 2]).unwrap();
            let grads = g.backward(loss).unwrap();
            (g.value(logits).clone(), grads.get(xv).unwrap().clone())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        prop_assert_eq!(l1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), l2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(g1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn predict_is_argmax_of_logits(seed in any::<u64>(), x in vec_in(0.0, 1.0, 12)) {
        let m = MlpClassifier::init(&[4, 6, 5], seed, 0.1).unwrap();
        let xt = Tensor::new(vec![3, 4], x).unwrap();
        let logits = m.predict_logits(&xt).unwrap();
        let preds = m.predict(&xt).unwrap();
        for (i, p) in preds.iter().enumerate() {
            prop_assert_eq!(*p, argmax(logits.row(i)));
        }
    }

    #[test]
    fn argmax_ties_go_to_lowest_index(v in vec_in(-1.0, 1.0, 5), dup in 0usize..5) {
        let mut v = v;
        let best = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v[dup] = best;
        let first = v.iter().position(|&x| x == best).unwrap();
        prop_assert_eq!(argmax(&v), first);
    }

    #[test]
    fn one_ulp_changes_the_digest(seed in any::<u64>(), index in 0usize..20, up in any::<bool>()) {
        let m = MlpClassifier::init(&[4, 5, 3], seed, 0.1).unwrap();
        let mut p = m.clone();
        p.perturb_parameter(0, index, |w| if up { w.next_up() } else { w.next_down() }).unwrap();
        prop_assert_ne!(m.digest(), p.digest());
    }

    #[test]
    fn commitment_is_deterministic_and_byte_sensitive(
        x in vec_in(0.0, 1.0, 6),
        y in prop::collection::vec(0usize..10, 2),
        aux in prop::collection::vec(any::<u8>(), 0..16),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let trigger = TriggerSet::new(Tensor::new(vec![2, 3], x).unwrap(), y, vec![Truth::NoClass, Truth::Class(1)]).unwrap();
        let a = OwnershipClaim::commit("accuser", [3; 32], SchemeKind::Lukas, trigger.clone(), aux.clone());
        let b = OwnershipClaim::commit("accuser", [3; 32], SchemeKind::Lukas, trigger, aux);
        prop_assert_eq!(a.commitment, b.commitment);

        let mut bytes = a.canonical_bytes();
        let i = flip.index(bytes.len());
        bytes[i] ^= 1 << bit;
        let tampered = sha256(&bytes);
        prop_assert_ne!(tampered, a.commitment);
    }

    #[test]
    fn thresholds_follow_the_population_rules(
        independent in prop::collection::vec(0.0f64..1.0, 2..8),
        extracted in prop::collection::vec(0.0f64..1.0, 2..8),
    ) {
        let t = DecisionThresholds::from_scores(SchemeKind::Adi, &independent, &extracted).unwrap();
        let max = independent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = extracted.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(t.get(ThresholdKind::Independent), max);
        prop_assert_eq!(t.get(ThresholdKind::Extracted), min);
        prop_assert_eq!(t.get(ThresholdKind::Mixed), (max + min) / 2.0);
        prop_assert!(!t.exceeds(t.mixed, ThresholdKind::Mixed));
    }

    #[test]
    fn dawn_pi_never_returns_the_label(digest in prop::array::uniform32(any::<u8>()), classes in 2usize..20, y in 0usize..20) {
        let y = y % classes;
        let out = dawn_pi(&digest, y, classes).unwrap();
        prop_assert!(out < classes);
        prop_assert_ne!(out, y);
    }

    #[test]
    fn dawn_mu_is_stable_inside_a_bin(bins in prop::collection::vec(0u8..16, 6), jitter in vec_in(-0.49, 0.49, 6)) {
        let width = 1.0 / LEVELS;
        let centre: Vec<f64> = bins.iter().map(|&b| (b as f64 + 0.5) * width).collect();
        let moved: Vec<f64> = centre.iter().zip(&jitter).map(|(c, j)| c + j * width).collect();
        prop_assert_eq!(dawn_mu(&centre), dawn_mu(&moved));
    }
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).into()
}

#[test]
fn split_parts_are_disjoint_over_100_seeds() {
    let ds = gen_blobs(1, 3, 4, 40, 0.08).unwrap();
    for seed in 0..100 {
        let s = split_disjoint(&ds, [0.45, 0.45, 0.10], seed).unwrap();
        let mut all: Vec<usize> = s.indices.iter().flatten().copied().collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total, "seed {seed}: parts overlap");
        assert_eq!(s.part_a.len() + s.part_b.len() + s.holdout.len(), total);
    }
}

#[test]
fn generated_features_stay_in_the_unit_box() {
    for seed in 0..10 {
        let ds = gen_blobs(seed, 5, 8, 50, 0.2).unwrap();
        assert!(ds.features().data().iter().all(|v| (0.0..=1.0).contains(v)));
        let ood = sample_ood(&ds, 20, seed).unwrap();
        assert!(ood.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn di_margins_do_not_shrink_at_lower_temperature() {
    let ds = gen_blobs(3, 4, 6, 40, 0.1).unwrap();
    let cfg = TrainConfig {
        hidden: vec![16],
        epochs: 10,
        ..TrainConfig::default()
    };
    let m = train(&ds, &cfg).unwrap();
    let sub = ds.subset(&(0..30).collect::<Vec<_>>());
    let base = di_embed(&m, sub.features(), sub.labels(), &DiConfig::default()).unwrap();
    for t in [0.9, 0.5, 0.25] {
        let sharp = m.with_temperature(t).unwrap();
        let emb = di_embed(&sharp, sub.features(), sub.labels(), &DiConfig::default()).unwrap();
        for (a, b) in base.data().iter().zip(emb.data()) {
            assert!(*b >= a - 1e-6, "temperature {t}: margin {a} fell to {b}");
        }
    }
}
