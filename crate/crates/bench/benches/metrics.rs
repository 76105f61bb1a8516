use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use trajfix::metrics::{exact_match, normalize_answer, rouge_l, token_f1};

const WORDS: [&str; 12] = [
    "the", "Pulandian", "District", "lies", "south", "of", "Kaiyuan,", "Liaoning", "at", "39.4", "degrees", "north.",
];

fn sentence(n: usize, shift: usize) -> String {
    (0..n).map(|i| WORDS[(i * 7 + shift) % WORDS.len()]).collect::<Vec<_>>().join(" ")
}

fn bench_metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("metrics");
    for n in [4usize, 32, 256] {
        let (p, g) = (sentence(n, 0), sentence(n, 3));
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("normalize", n), &p, |b, p| b.iter(|| normalize_answer(black_box(p))));
        group.bench_with_input(BenchmarkId::new("exact_match", n), &(&p, &g), |b, (p, g)| {
            b.iter(|| exact_match(black_box(p), black_box(g)))
        });
        group.bench_with_input(BenchmarkId::new("token_f1", n), &(&p, &g), |b, (p, g)| {
            b.iter(|| token_f1(black_box(p), black_box(g)))
        });
        group.bench_with_input(BenchmarkId::new("rouge_l", n), &(&p, &g), |b, (p, g)| {
            b.iter(|| rouge_l(black_box(p), black_box(g)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_metrics);
criterion_main!(benches);
