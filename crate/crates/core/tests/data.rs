mod common;

use ndarray::Array2;
use proptest::prelude::*;

use crossbrain::eeg_io::{batch_iter, generate_synthetic, read_container, read_sample_set, write_container, write_sample_set, EegRecording, SampleSet, SyntheticSpec};
use crossbrain::patching::{apply_mask, draw_mask, to_patches, MaskSpec, MaskToken};
use crossbrain::preprocess::{bandpass, normalize, notch, reject_bad, resample, run_pipeline, segment, PreprocessConfig};

use common::*;

fn rec(rows: &[Vec<f64>], rate: f64) -> EegRecording {
    let data = Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, k)| rows[i][k] as f32);
    EegRecording::with_default_names(data, rate, 1e-6).unwrap()
}

fn row(r: &EegRecording, i: usize) -> Vec<f64> {
    r.data.row(i).iter().map(|&v| f64::from(v)).collect()
}

#[test]
fn bandpass_keeps_passband_and_removes_drift() {
    let rate = 200.0;
    let x: Vec<f64> = tone(10.0, rate, 4000, 30.0).iter().zip(tone(0.05, rate, 4000, 50.0)).map(|(a, b)| a + b).collect();
    let out = bandpass(&rec(&[x], rate), 0.3, 75.0).unwrap();
    let y = row(&out, 0);
    assert!((amplitude_at(&y, 10.0, rate) - 30.0).abs() < 0.3);
    assert!(amplitude_at(&y, 0.05, rate) < 5.0);
}

#[test]
fn notch_spares_neighbouring_frequencies() {
    let rate = 250.0;
    let x = tone(10.0, rate, 2500, 20.0);
    let y = row(&notch(&rec(std::slice::from_ref(&x), rate), 60.0).unwrap(), 0);
    let loss_db = 20.0 * (amplitude_at(&x, 10.0, rate) / amplitude_at(&y, 10.0, rate)).log10();
    assert!(loss_db.abs() < 0.1, "{loss_db}");
}

#[test]
fn resampling_length_and_tone() {
    let x = tone(20.0, 256.0, 2560, 10.0);
    let out = resample(&rec(&[x], 256.0), 200.0).unwrap();
    assert_eq!(out.timepoints(), 2000);
    assert_eq!(out.sample_rate, 200.0);
    let y = row(&out, 0);
    assert!((peak_frequency(&y, 200.0) - 20.0).abs() < 0.2);
}

#[test]
fn pipeline_counts_segments_and_injected_artifacts() {
    let mut r = rng(40);
    let mut rows = vec![vec![0.0; 200 * 150]; 3];
    for row in rows.iter_mut() {
        for v in row.iter_mut() {
            *v = 8.0 * gauss(&mut r);
        }
    }
    for seg in [1, 3] {
        for k in 0..60 {
            rows[seg % 3][200 * (30 * seg + 10) + k] -= 300.0;
        }
    }
    let (set, report) = run_pipeline(&rec(&rows, 200.0), &PreprocessConfig::default()).unwrap();
    assert_eq!((report.segments, report.rejected), (5, 2));
    assert_eq!(set.len(), 3);
    let inside = set.samples.iter().flat_map(|s| s.iter()).filter(|v| v.abs() <= 1.0).count();
    let total: usize = set.samples.iter().map(|s| s.len()).sum();
    assert!(inside as f64 >= 0.99 * total as f64);
    assert_eq!(set.samples[0].nrows(), 3);
}

#[test]
fn clean_ninety_seconds_gives_three_segments() {
    let mut r = rng(41);
    let rows = vec![(0..200 * 90).map(|_| 5.0 * gauss(&mut r)).collect::<Vec<f64>>(); 2];
    let (_, report) = run_pipeline(&rec(&rows, 200.0), &PreprocessConfig::default()).unwrap();
    assert_eq!(report.to_string(), "3 segments, 0 rejected");
}

#[test]
fn bad_band_edges_are_config_errors() {
    let cfg = PreprocessConfig {
        bandpass_lo: 40.0,
        bandpass_hi: 20.0,
        ..PreprocessConfig::default()
    };
    assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
}

#[test]
fn synthetic_is_a_pure_function_of_its_spec() {
    let spec = SyntheticSpec {
        samples_per_class: 5,
        ..SyntheticSpec::default()
    };
    assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    let other = SyntheticSpec { rng_seed: 1, ..spec.clone() };
    assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
}

#[test]
fn sample_set_roundtrip_keeps_labels() {
    let set = generate_synthetic(&SyntheticSpec {
        samples_per_class: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_sample_set(&set, dir.path()).unwrap();
    assert_eq!(read_sample_set(dir.path()).unwrap(), set);
}

#[test]
fn nan_recording_refused() {
    let mut data = Array2::<f32>::zeros((2, 10));
    data[[1, 4]] = f32::NAN;
    assert!(EegRecording::with_default_names(data, 200.0, 1e-6).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn container_roundtrip_is_bit_exact(c in 1usize..4, t in 1usize..40, bits in proptest::collection::vec(any::<u32>(), 160)) {
        let data = Array2::from_shape_fn((c, t), |(i, k)| {
            let v = f32::from_bits(bits[(i * t + k) % bits.len()]);
            if v.is_finite() { v } else { 1.5 }
        });
        let rec = EegRecording::with_default_names(data.clone(), 128.0, 1e-6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_container(&rec, dir.path()).unwrap();
        let back = read_container(dir.path()).unwrap();
        prop_assert!(back.data.iter().zip(data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn batches_partition_the_index_set(n in 1usize..60, bs in 1usize..17, seed in any::<u64>()) {
        let set = SampleSet::new(vec![Array2::zeros((1, 4)); n], None, 200.0).unwrap();
        let mut seen: Vec<usize> = batch_iter(&set, bs, Some(seed)).unwrap().flatten().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn rejection_is_idempotent_and_keeps_channels(values in proptest::collection::vec(-150.0f32..150.0, 24)) {
        let samples: Vec<Array2<f32>> = values.chunks(6).map(|c| Array2::from_shape_vec((2, 3), c.to_vec()).unwrap()).collect();
        let set = SampleSet::new(samples, None, 200.0).unwrap();
        let once = reject_bad(&set, 100.0);
        prop_assert_eq!(&reject_bad(&once, 100.0), &once);
        prop_assert!(once.samples.iter().all(|s| s.nrows() == 2 && s.iter().all(|v| v.abs() <= 100.0)));
        let normed = normalize(&once, 100.0).unwrap();
        prop_assert!(normed.samples.iter().all(|s| s.iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn segments_preserve_channels(c in 1usize..4, secs in 2usize..7) {
        let rows = vec![vec![0.5; 100 * secs]; c];
        let set = segment(&rec(&rows, 100.0), 2.0).unwrap();
        prop_assert_eq!(set.len(), secs / 2);
        prop_assert!(set.samples.iter().all(|s| s.dim() == (c, 200)));
    }

    #[test]
    fn masking_touches_only_masked_patches(c in 1usize..5, n in 1usize..6, ratio in 0.0f64..1.0, seed in any::<u64>()) {
        let t = 7;
        let sample = Array2::from_shape_fn((c, n * t + 3), |(i, k)| (i * 1000 + k) as f64 + 1.0);
        let grid = to_patches(sample.view(), t).unwrap();
        let spec = MaskSpec { ratio, token: MaskToken::FullZero, rng_seed: seed };
        let masked = apply_mask(&grid, &spec, None).unwrap();
        prop_assert_eq!(&masked.mask, &draw_mask(c, n, ratio, seed));
        prop_assert_eq!(masked.originals.as_ref().unwrap(), &grid.patches);
        for ((i, j), &m) in masked.mask.indexed_iter() {
            for k in 0..t {
                let want = if m == 1 { 0.0 } else { grid.patches[[i, j, k]] };
                prop_assert_eq!(masked.patches[[i, j, k]], want);
            }
        }
        prop_assert_eq!(masked.reassemble(), sample.slice(ndarray::s![.., ..n * t]).to_owned());
    }
}
