//! Batch-parallel kernels under the rayon pool versus one worker.
//!
//! With default features each kernel is timed on the global pool and on a
//! single-thread pool. Built with `--no-default-features` the same kernels run
//! on the sequential fallback, so saving a baseline in one mode and comparing
//! in the other contrasts the two builds:
//!
//! ```text
//! cargo bench -p scriptbmi-core --bench kernels -- --save-baseline rayon
//! cargo bench -p scriptbmi-core --bench kernels --no-default-features -- --baseline rayon
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use scriptbmi_core::harness::preset_by_tag;
use scriptbmi_core::layers::{conv2d_backward, conv2d_forward, ConvParams, LayerCache, Mode};
use scriptbmi_core::model::{build_model, Network};
use scriptbmi_core::{RngStream, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut s = RngStream::new(seed, "bench", 0);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| s.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Runs `f` once per execution mode available in this build.
fn modes(group: &mut criterion::BenchmarkGroup<'_, criterion::measurement::WallTime>, name: &str, mut f: impl FnMut() + Send) {
    #[cfg(feature = "parallel")]
    {
        group.bench_function(BenchmarkId::new(name, "rayon"), |b| b.iter(&mut f));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function(BenchmarkId::new(name, "rayon-1-thread"), |b| b.iter(|| single.install(&mut f)));
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function(BenchmarkId::new(name, "sequential"), |b| b.iter(&mut f));
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    group.sample_size(10);
    let x = random(&[16, 32, 32, 32], 1);
    let p = ConvParams::new(random(&[64, 32, 3, 3], 2), random(&[64], 3)).unwrap();
    let mut cache = LayerCache::new();
    let y = conv2d_forward(&x, &p, &mut cache).unwrap();
    let g = random(y.shape(), 4);
    modes(&mut group, "forward", || {
        black_box(conv2d_forward(&x, &p, &mut LayerCache::new()).unwrap());
    });
    modes(&mut group, "backward", || {
        black_box(conv2d_backward(&g, &cache, &p).unwrap());
    });
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    let cfg = preset_by_tag("base").unwrap().config.with_input([3, 32, 32]).with_classes(8);
    let mut net = Network::init(&build_model(&cfg).unwrap(), &RngStream::new(1, "init", 0)).unwrap();
    let x = random(&[16, 3, 32, 32], 5);
    let dropout = RngStream::new(1, "dropout", 0);
    modes(&mut group, "train_step", || {
        let out = net.forward(&x, Mode::Train, Some(&dropout)).unwrap();
        black_box(net.backward(&out).unwrap());
    });
    group.finish();
}

criterion_group!(benches, conv, network);
criterion_main!(benches);
