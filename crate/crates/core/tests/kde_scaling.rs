//! Cost model check for the KDE baseline: the full double sum is O(N²), so
//! doubling the sample count should roughly quadruple the wall time.

use std::time::Instant;

use score_mi::channels::{ChannelModel, FrontEnd, Prior};
use score_mi::oracles::kde_loo_mi;
use score_mi::rng::{purpose, stream};

#[test]
fn doubling_samples_roughly_quadruples_cost() {
    let model =
        ChannelModel::new(Prior::GaussianIso { dim: 4, power: 1.0 }, FrontEnd::Identity).unwrap();
    let time_kde = |n: usize, idx: u32| {
        let batch = model
            .forward(1.0, n, &mut stream(1, purpose::KDE, idx))
            .unwrap();
        // warm-up evaluation keeps allocator and thread-pool effects out of
        // the measured ratio
        kde_loo_mi(batch.w.view(), batch.y.view(), 1.0).unwrap();
        let started = Instant::now();
        kde_loo_mi(batch.w.view(), batch.y.view(), 1.0).unwrap();
        started.elapsed().as_secs_f64()
    };
    let small = time_kde(10_000, 0);
    let large = time_kde(20_000, 1);
    let ratio = large / small;
    assert!(
        (2.0..=6.0).contains(&ratio),
        "expected ≈4× ± 50%, measured {ratio:.2}× ({small:.2}s → {large:.2}s)"
    );
}
