//! Code examples embedded in the guide under book/. Each `// ANCHOR` block
//! is included verbatim by a chapter, so the book's snippets compile and run
//! as part of the test suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn task_chapter() {
    // ANCHOR: encode
    use recall_core::task::{encode_instance, make_vocab, random_permutations, sample_table};

    // two context levels of sizes [2, 2], four value tokens
    let vocab = make_vocab(&[2, 2], 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = sample_table(&vocab, &mut rng);
    let perms = random_permutations(&table.shape, &mut rng);
    let instance = encode_instance(&table, &vocab, &perms).unwrap();

    // information component first, then the permuted inquiry
    assert_eq!(instance.tokens.len(), 16);
    assert_eq!(instance.info_len, 10);
    // every last-level inquiry token is a query with a withheld value
    assert_eq!(instance.queries.len(), 4);
    // ANCHOR_END: encode
}

#[test]
fn patterns_chapter() {
    // ANCHOR: patterns
    use recall_core::linalg::Matrix;
    use recall_core::patterns::{
        cisa_pattern, hax_combine, ks_pattern, ks_scores, lsh_pattern, CisaKind, KsScorer,
        LshConfig, BinRule,
    };

    // context-independent: sliding window of width 2
    let sw = cisa_pattern(CisaKind::SlidingWindow, 4, 2, 2).unwrap();
    assert_eq!(sw.rows, vec![vec![0], vec![0, 1], vec![1, 2], vec![2, 3]]);

    // context-dependent: LSH bins and learned key selection over Q/K content
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = Matrix::randn(12, 4, &mut rng);
    let k = Matrix::randn(12, 4, &mut rng);
    let cfg = LshConfig { h: 2, rule: BinRule::SignBit, k_bin: 3, seed: 9 };
    let lsh = lsh_pattern(&q, &k, &cfg).unwrap();

    let scorer = KsScorer::randn(4, &mut rng);
    let ks = ks_pattern(&ks_scores(&k, &q, &scorer), 12, 3).unwrap();

    // HAX is the row-wise union of both
    let hax = hax_combine(&lsh, &ks).unwrap();
    for i in 0..12 {
        assert!(hax.rows[i].len() <= 6);
        assert!(hax.rows[i].iter().all(|&j| j <= i)); // causal
    }
    // ANCHOR_END: patterns
}

#[test]
fn gssm_chapter() {
    // ANCHOR: gssm
    use recall_core::gssm::{run_gssm, unit_sphere_codes, OverwriteMachine, SlotLayout};

    // state = one code slot per context level, one value slot, one is_v flag
    let layout = SlotLayout { levels: 2, code_dim: 4 };
    let codes = unit_sphere_codes(3, 4, 1).unwrap();

    // token 0: level-1 context, token 1: level-2 context, token 2: a value
    let machine = OverwriteMachine {
        layout,
        embeddings: vec![
            layout.embed(0, &codes[0], -1.0),
            layout.embed(1, &codes[1], -1.0),
            layout.embed(2, &codes[2], 1.0),
        ],
    };

    // conditional overwrite: each token replaces exactly its own slot
    let (states, _) = run_gssm(&machine, &[0, 1, 2]).unwrap();
    let last = states.last().unwrap();
    assert_eq!(last.len(), layout.state_dim());
    assert_eq!(&last[layout.slot_range(0)], codes[0].as_slice());
    assert_eq!(&last[layout.value_range()], codes[2].as_slice());
    assert_eq!(last[layout.flag_index()], 1.0); // latest token was a value
    // ANCHOR_END: gssm
}

#[test]
fn theory_chapter() {
    // ANCHOR: theory
    use recall_core::theory::{build_cdsa_construction, capacity_max_accuracy, run_construction};
    use recall_core::task::{encode_instance, make_vocab, random_permutations, sample_table};

    // Prop 3.2 / C.1: the CDSA construction answers every query exactly
    let model = build_cdsa_construction(&[2, 2], 8, 5).unwrap();
    let vocab = make_vocab(&[2, 2], 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let table = sample_table(&vocab, &mut rng);
    let perms = random_permutations(&table.shape, &mut rng);
    let instance = encode_instance(&table, &vocab, &perms).unwrap();
    let (preds, _) = run_construction(&model, &instance).unwrap();
    for (p, (_, target)) in preds.iter().zip(&instance.queries) {
        assert_eq!(p, target);
    }

    // Cor 3.1: with |U| = 4 states, |V| = 2 values, n = 3 entries, the best
    // any generalized SSM can do is 4 / 2^3 = 1/2 — computed exactly
    let report = capacity_max_accuracy(4, 2, 3).unwrap();
    assert_eq!(report.max_accuracy, "1/2");
    assert_eq!(report.bound, "1/2");
    // ANCHOR_END: theory
}

#[test]
fn neural_chapter() {
    // ANCHOR: neural
    use recall_core::linalg::Matrix;
    use recall_core::nn::model::{HybridModelConfig, Model, PatternKind, PatternMode};
    use recall_core::nn::tape::Tape;
    use recall_core::patterns::{BinRule, LshConfig};

    let config = HybridModelConfig {
        layers: 2,
        d: 8,
        vocab_size: 12,
        patterns: vec![PatternKind::Hax, PatternKind::Hax],
        budget: 4,
        lsh: LshConfig { h: 2, rule: BinRule::SignBit, k_bin: 2, seed: 0 },
        gate_init: 0.0, // zero-initialized gate: starts as a pure SSM
        widen_factor: 1,
        stride: 2,
    };
    let model = Model::new(config.clone(), 7).unwrap();
    let twin = Model::new(config.attention_free(), 7).unwrap();

    let tokens = [1usize, 5, 2, 8, 3];
    let mode = PatternMode::Dynamic { lsh_seed: 4 };
    let mut t1 = Tape::new();
    let a = model.forward(&mut t1, &tokens, &mode).unwrap();
    let mut t2 = Tape::new();
    let b = twin.forward(&mut t2, &tokens, &mode).unwrap();
    // gate-zero contract: the hybrid is its attention-free twin at init
    assert_eq!(t1.value(a.logits).data, t2.value(b.logits).data);

    // the tape differentiates any scalar loss end to end
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &tokens, &mode).unwrap();
    let loss = tape.cross_entropy(out.logits, &[Some(5), Some(2), Some(8), Some(3), None]);
    tape.backward(loss);
    let _grad: &Matrix = tape.grad(out.logits);
    // ANCHOR_END: neural
}

#[test]
fn bench_chapter() {
    // ANCHOR: bench
    use recall_core::bench::{emit_report, run_grid, ArchSpec, GridSpec, ReportFormat};
    use recall_core::nn::model::{HybridModelConfig, PatternKind};
    use recall_core::nn::train::TrainConfig;
    use recall_core::patterns::{BinRule, LshConfig};
    use recall_core::task::DatasetConfig;

    let model = HybridModelConfig {
        layers: 1,
        d: 4,
        vocab_size: 9,
        patterns: vec![PatternKind::None],
        budget: 4,
        lsh: LshConfig { h: 2, rule: BinRule::SignBit, k_bin: 2, seed: 0 },
        gate_init: 0.0,
        widen_factor: 1,
        stride: 2,
    };
    let grid = GridSpec {
        archs: vec![ArchSpec { name: "base".into(), model }],
        lrs: vec![1e-3],
        seeds: vec![0],
        dataset: DatasetConfig {
            levels: 1, size_low: 2, size_high: 3, value_size: 4, count: 8, seed: 5,
        },
        val_count: 4,
        train: TrainConfig { steps: 1, batch_size: 2, eval_every: 1, ..TrainConfig::default() },
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_grid(&grid, dir.path()).unwrap();
    let markdown = emit_report(&report, ReportFormat::Markdown).unwrap();
    assert!(markdown.starts_with("| architecture |"));

    // a second run resumes from the on-disk ledger: nothing is recomputed
    let resumed = run_grid(&grid, dir.path()).unwrap();
    assert_eq!(resumed.executed_cells, 0);
    // ANCHOR_END: bench
}
