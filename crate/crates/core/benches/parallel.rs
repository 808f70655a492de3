//! Sequential vs parallel execution of the batch kernels the engine uses.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deltanas::baselines;
use deltanas::exec::ExecMode;
use deltanas::novelty::{CorpusIndex, Fingerprinter};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

/// Baseline sources with a distinct trailing line each, cycled to `n`.
fn sources(n: usize) -> Vec<String> {
    let pool = baselines::builtin();
    (0..n)
        .map(|i| format!("{}\n# variant {i}: width {}\n", pool[i % pool.len()].source, 8 * (i % 17)))
        .collect()
}

fn fingerprint_batch(c: &mut Criterion) {
    let fp = Fingerprinter::new(1, true);
    let mut group = c.benchmark_group("fingerprint_all");
    for n in [50, 400] {
        let texts = sources(n);
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &texts, |b, texts| {
                b.iter(|| black_box(fp.fingerprint_all(mode, texts)))
            });
        }
    }
    group.finish();
}

fn corpus_scan(c: &mut Criterion) {
    let fp = Fingerprinter::new(1, true);
    let mut group = c.benchmark_group("max_similarity");
    for n in [1_000, 20_000] {
        let texts = sources(n.min(400));
        let sigs: Vec<_> = fp
            .fingerprint_all(ExecMode::Parallel, &texts)
            .into_iter()
            .map(|s| s.expect("baselines shingle"))
            .collect();
        let mut corpus = CorpusIndex::new(1);
        for i in 0..n {
            corpus.add(format!("e{i}"), sigs[i % sigs.len()].clone()).unwrap();
        }
        let probe = fp.fingerprint(&sources(401)[400]).unwrap();
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &corpus, |b, corpus| {
                b.iter(|| black_box(corpus.max_similarity(&probe, mode).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, fingerprint_batch, corpus_scan);
criterion_main!(benches);
