//! Property-based invariants: pattern generators against Eq.-4 style
//! structural rules, task round trips, and the binning equivalence.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recall_core::linalg::Matrix;
use recall_core::patterns::{
    cisa_pattern, expand_codebook, hash_bins, hax_combine, ks_pattern, ks_scores, lsh_pattern,
    BinRule, CisaKind, KsScorer, LshConfig, SparsePattern,
};
use recall_core::task::{
    decode_instance, encode_instance, make_vocab, random_permutations, sample_table,
};

fn assert_invariants(p: &SparsePattern, budget: usize) {
    p.validate().expect("pattern invariants violated");
    assert!(p.budget <= budget, "declared budget {} over cap {budget}", p.budget);
    for (i, row) in p.rows.iter().enumerate() {
        assert!(row.len() <= budget, "row {i} over budget");
        assert!(row.windows(2).all(|w| w[0] < w[1]), "row {i} not strictly sorted");
        assert!(row.iter().all(|&j| j <= i), "row {i} breaks causality");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cisa_patterns_respect_structure(
        kind_idx in 0usize..4,
        l in 1usize..128,
        k in 1usize..32,
        stride in 2usize..8,
    ) {
        let kind = [
            CisaKind::SlidingWindow,
            CisaKind::Dilated,
            CisaKind::SwPlusDilated,
            CisaKind::AShaped,
        ][kind_idx];
        let p = cisa_pattern(kind, l, k, stride).unwrap();
        assert_invariants(&p, k);
    }

    #[test]
    fn lsh_ks_hax_respect_structure(l in 1usize..64, k in 1usize..16, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 6;
        let q = Matrix::randn(l, d, &mut rng);
        let key = Matrix::randn(l, d, &mut rng);
        let cfg = LshConfig { h: 3, rule: BinRule::SignBit, k_bin: k, seed };
        let lsh = lsh_pattern(&q, &key, &cfg).unwrap();
        assert_invariants(&lsh, k);
        let scorer = KsScorer::randn(d, &mut rng);
        let scores = ks_scores(&key, &q, &scorer);
        let ks = ks_pattern(&scores, l, k).unwrap();
        assert_invariants(&ks, k);
        let hax = hax_combine(&lsh, &ks).unwrap();
        assert_invariants(&hax, 2 * k);
        // union semantics: every branch row is contained in the hax row
        for i in 0..l {
            for j in &lsh.rows[i] {
                prop_assert!(hax.rows[i].contains(j));
            }
            for j in &ks.rows[i] {
                prop_assert!(hax.rows[i].contains(j));
            }
        }
    }

    #[test]
    fn sign_bit_bins_match_expanded_codebook(seed in 0u64..300, h in 1usize..5, d in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::randn(16, d, &mut rng);
        let proj = Matrix::randn(d, h, &mut rng);
        let sign = hash_bins(&x, &proj, BinRule::SignBit);
        let codebook = expand_codebook(&proj, 8).unwrap();
        let argmax = hash_bins(&x, &codebook, BinRule::Argmax);
        prop_assert_eq!(sign, argmax);
    }

    #[test]
    fn encode_decode_round_trip(seed in 0u64..300, s1 in 2usize..5, s2 in 2usize..4) {
        let vocab = make_vocab(&[s1, s2], 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = sample_table(&vocab, &mut rng);
        let perms = random_permutations(&table.shape.clone(), &mut rng);
        let inst = encode_instance(&table, &vocab, &perms).unwrap();
        let decoded =
            decode_instance(&inst.tokens, inst.info_len, &vocab, &table.shape).unwrap();
        prop_assert_eq!(decoded.entries, table.entries);
    }
}
