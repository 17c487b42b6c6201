use proptest::prelude::*;
use rrn_core::data::{chunk, generate, render_blob, sample_frames, video_chunks, DatasetSpec, SyntheticVideo, Task};
use rrn_core::model::ChunkSpec;
use rrn_core::Tensor;

/// Video whose frame `f` is filled with the value `f`.
fn counting_video(frames: usize) -> SyntheticVideo {
    let data = (0..frames).flat_map(|f| vec![f as f32; 4]).collect();
    SyntheticVideo {
        frames: Tensor::from_vec(&[frames, 1, 2, 2], data).unwrap(),
        label: 0,
        seed: 0,
    }
}

proptest! {
    #[test]
    fn chunks_hold_strided_consecutive_frames(frames in 1usize..40, t in 1usize..6, s in 1usize..5) {
        let spec = ChunkSpec::new(t, s).unwrap();
        let v = counting_video(frames);
        match video_chunks(&v, &spec) {
            Ok(chunks) => {
                prop_assert!(frames >= spec.min_frames());
                prop_assert_eq!(chunks.len(), ((frames - 1) / s + 1) / t);
                prop_assert_eq!(chunks.len(), spec.chunks_per_video(frames));
                for (m, c) in chunks.iter().enumerate() {
                    prop_assert_eq!(c.shape(), &[t, 1, 2, 2][..]);
                    for j in 0..t {
                        prop_assert_eq!(c.data()[j * 4] as usize, (m * t + j) * s);
                    }
                }
            }
            Err(_) => prop_assert!(frames < spec.min_frames()),
        }
    }

    #[test]
    fn generation_is_deterministic_and_bounded(seed in any::<u64>(), directions in 2usize..6) {
        let spec = DatasetSpec {
            task: Task::Direction { directions },
            videos_per_class: 1,
            frames: 3,
            size: 8,
            ..Default::default()
        };
        let a = generate(&spec, seed).unwrap();
        prop_assert_eq!(&a, &generate(&spec, seed).unwrap());
        prop_assert_eq!(a.len(), directions);
        let mut labels: Vec<usize> = a.iter().map(|v| v.label).collect();
        labels.sort_unstable();
        prop_assert_eq!(labels, (0..directions).collect::<Vec<_>>());
        for v in &a {
            prop_assert!(v.frames.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}

#[test]
fn sampling_and_chunking_reject_impossible_requests() {
    let v = counting_video(5);
    assert!(sample_frames(&v.frames, 0).is_err());
    assert!(chunk(&v.frames, 6).is_err());
    assert_eq!(sample_frames(&v.frames, 2).unwrap().shape()[0], 3);
    let spec = DatasetSpec {
        frames: 3,
        ..Default::default()
    };
    assert!(spec.check_chunking(&ChunkSpec::new(3, 2).unwrap()).is_err());
    assert!(spec.check_chunking(&ChunkSpec::new(2, 2).unwrap()).is_ok());
    assert!(spec.check_chunking(&ChunkSpec::new(2, 1).unwrap()).is_ok());
}

#[test]
fn reversal_videos_pair_forward_and_backward_playback() {
    let spec = DatasetSpec {
        task: Task::Reversal,
        videos_per_class: 3,
        frames: 5,
        size: 10,
        ..Default::default()
    };
    let videos = generate(&spec, 11).unwrap();
    assert_eq!(videos.len(), 6);
    let frame = 100;
    for pair in videos.chunks(2) {
        assert_eq!((pair[0].label, pair[1].label), (0, 1));
        for f in 0..5 {
            assert_eq!(
                pair[0].frames.data()[f * frame..(f + 1) * frame],
                pair[1].frames.data()[(4 - f) * frame..(5 - f) * frame]
            );
        }
    }
}

#[test]
fn blob_wraps_around_the_torus() {
    let centred = render_blob(16, 8.0, 8.0, 2.0);
    let corner = render_blob(16, 0.0, 0.0, 2.0);
    // Shifting the centre by half the canvas is a pure circular shift.
    for y in 0..16 {
        for x in 0..16 {
            let a = centred[y * 16 + x];
            let b = corner[((y + 8) % 16) * 16 + (x + 8) % 16];
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn different_seeds_give_different_videos() {
    let spec = DatasetSpec {
        videos_per_class: 2,
        frames: 2,
        size: 8,
        ..Default::default()
    };
    assert_ne!(generate(&spec, 1 << 40).unwrap(), generate(&spec, 2 << 40).unwrap());
}
