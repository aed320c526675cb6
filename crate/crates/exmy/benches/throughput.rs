//! Throughput for the hot paths, labeled by execution mode so the default
//! (rayon) and `--no-default-features` (sequential) runs can be compared:
//!
//! ```text
//! cargo bench -p exmy
//! cargo bench -p exmy --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use exmy::{
    analysis::ExponentHistogram, bitpack, codec, emulate_tensor, BlockShape, FormatSpec, Scheme,
    Tensor,
};
use rand::{Rng, SeedableRng};
use std::hint::black_box;

const ROWS: usize = 512;
const COLS: usize = 512;

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

/// Values spread over several binades so every scheme has real work to do.
fn sample_tensor() -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let data: Vec<f32> = (0..ROWS * COLS)
        .map(|_| {
            let m = rng.random::<f32>() * 2.0 - 1.0;
            let e = rng.random_range(-8..8);
            m * (e as f32).exp2()
        })
        .collect();
    Tensor::new(vec![ROWS, COLS], data).unwrap()
}

fn bench_throughput(c: &mut Criterion) {
    let t = sample_tensor();
    let n = t.len() as u64;
    let fmt = FormatSpec::new(4, 3).unwrap();
    let shape = BlockShape::SubRow(64);
    let scheme = Scheme::MaxExpBeforeRounding;
    let packed = codec::encode_tensor(&t, fmt, shape, scheme).unwrap();
    let q = exmy::quantize_tensor(&t, fmt, shape, scheme).unwrap();

    let mut g = c.benchmark_group(format!("throughput/{}", mode()));
    g.throughput(Throughput::Elements(n));
    g.bench_function("emulate_e4m3_subrow64", |b| {
        b.iter(|| emulate_tensor(black_box(&t), fmt, shape, scheme).unwrap())
    });
    g.bench_function("encode_e4m3_subrow64", |b| {
        b.iter(|| codec::encode_tensor(black_box(&t), fmt, shape, scheme).unwrap())
    });
    g.bench_function("decode_e4m3_subrow64", |b| {
        b.iter(|| codec::decode_tensor(black_box(&packed)).unwrap())
    });
    g.bench_function("pack_6bit", |b| {
        b.iter(|| bitpack::pack_rows(black_box(&q.codes), ROWS, COLS, fmt.bit_width()).unwrap())
    });
    g.bench_function("unpack_6bit", |b| {
        b.iter(|| black_box(&packed.segments).unpack())
    });
    g.bench_function("histogram", |b| {
        b.iter(|| ExponentHistogram::from_values(black_box(t.data())))
    });
    g.finish();
}

criterion_group!(benches, bench_throughput);
criterion_main!(benches);
