//! Property-based invariants over formats, schedules and graph ops.

use num_complex::Complex64;
use proptest::prelude::*;

use linformer::autodiff::{Matrix, Tape};
use linformer::format::{read_lcp1, write_lcp1, DatasetFile};
use linformer::model::permute_rows;
use linformer::training::{build_windows, onecycle_lr, wmse_loss};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lcp1_round_trips(
        num_samples in 1usize..4,
        frames in 1usize..6,
        r in 1usize..3,
        t in 1usize..3,
        seed in any::<u32>(),
    ) {
        let total = num_samples * frames * r * t;
        // f32-representable values so the round trip is exact
        let data: Vec<Complex64> = (0..total)
            .map(|i| {
                let x = ((seed as usize + i * 37) % 1000) as f64 / 8.0 - 60.0;
                Complex64::new(x, -x / 2.0)
            })
            .collect();
        let ds = DatasetFile { num_samples, frames_per_sample: frames, r, t, data };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.lcp1");
        write_lcp1(&path, &ds).unwrap();
        prop_assert_eq!(read_lcp1(&path).unwrap(), ds);
    }

    #[test]
    fn onecycle_stays_within_bounds(total in 2usize..5000, max_lr in 1e-6f64..1.0) {
        for step in 0..total {
            let lr = onecycle_lr(step, total, max_lr).unwrap();
            prop_assert!(lr >= max_lr / 1e4 - 1e-15);
            prop_assert!(lr <= max_lr + 1e-12);
        }
    }

    #[test]
    fn window_count_matches_formula(
        frames in 1usize..200,
        n_past in 1usize..20,
        n_future in 1usize..10,
    ) {
        let data = vec![Complex64::new(1.0, 0.0); frames];
        let span = n_past + n_future;
        let res = build_windows(&data, frames, 1, 1, n_past, n_future);
        if frames < span {
            prop_assert!(res.is_err());
        } else {
            prop_assert_eq!(res.unwrap().len(), frames - span + 1);
        }
    }

    #[test]
    fn wmse_between_scaled_mse_bounds(n_future in 1usize..12, seed in any::<u32>()) {
        // weights are in (0, 1], so wmse <= mse and wmse >= mse / sqrt(N_L)
        let pred: Vec<Complex64> = (0..n_future)
            .map(|i| Complex64::new(((seed as usize + i) % 7) as f64 * 0.3, 0.1))
            .collect();
        let target = vec![Complex64::new(0.0, 0.0); n_future];
        let w = wmse_loss(&pred, &target, 1, n_future).unwrap();
        let sum: f64 = pred.iter().map(|p| p.norm_sqr()).sum();
        let mse = sum / n_future as f64;
        prop_assert!(w <= mse + 1e-12);
        prop_assert!(w >= mse / (n_future as f64).sqrt() - 1e-12);
    }

    #[test]
    fn transpose_is_an_involution(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let m = Matrix::from_fn(rows, cols, |i, j| {
            ((seed as usize).wrapping_add(i * 31 + j * 7) % 17) as f64 - 8.0
        });
        let mut tape = Tape::new();
        let a = tape.leaf(&m);
        let tt = tape.transpose(a);
        let back = tape.transpose(tt);
        prop_assert_eq!(tape.value(back).data, m.data);
    }

    #[test]
    fn permute_rows_inverse_round_trips(n in 1usize..12, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut inv = vec![0usize; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let m = Matrix::from_fn(n, 3, |i, j| (i * 3 + j) as f64);
        let round = permute_rows(&permute_rows(&m, &perm), &inv);
        prop_assert_eq!(round.data, m.data);
    }
}
