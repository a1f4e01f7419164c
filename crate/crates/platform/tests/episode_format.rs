use proptest::prelude::*;
use proptest::strategy::ValueTree;
use sdai_core::episode::{sha256, Source, EPISODE_MAGIC};
use sdai_core::{CameraIntrinsics, Episode, EpisodeError, EpisodeId, Sample, VehicleState};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(1e-300)]
}

prop_compose! {
    fn arb_episode()(
        w in 1usize..12,
        h in 1usize..6,
        m in 1u8..6,
        n in 0usize..6,
        dt in 0.01f64..0.5,
        tag in "[a-z_]{0,12}",
        source in 0u8..3,
        id in any::<[u8; 16]>(),
        cam in prop::array::uniform5(finite()),
    )(
        pixels in prop::collection::vec(prop::collection::vec(any::<u8>(), w * h), n),
        depth in prop::collection::vec(prop::option::of(prop::collection::vec(prop_oneof![0.0f32..100.0, Just(f32::INFINITY)], w * h)), n),
        states in prop::collection::vec(prop::array::uniform5(finite()), n),
        labels in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, m as usize), n),
        w in Just(w), h in Just(h), m in Just(m), dt in Just(dt), tag in Just(tag),
        source in Just(source), id in Just(id), cam in Just(cam),
    ) -> Episode {
        let samples = pixels
            .into_iter()
            .zip(depth)
            .zip(states.into_iter().zip(labels))
            .enumerate()
            .map(|(i, ((pixels, depth), (s, steer)))| Sample {
                timestamp: i as f64 * dt,
                state: VehicleState { x: s[0], y: s[1], heading: s[2], speed: s[3], steer: s[4] },
                pixels,
                depth,
                steer,
            })
            .collect();
        Episode {
            id: EpisodeId(id),
            scenario_tag: tag,
            dt,
            camera: CameraIntrinsics {
                width_full: w,
                height: h,
                focal: cam[0],
                mount_height: cam[1],
                pitch: cam[2],
                yaw_offset: cam[3],
                horizontal_shift: cam[4],
            },
            n_frames: 6,
            m_steps: m,
            source: [Source::Expert, Source::Teleop, Source::Augmented][source as usize],
            samples,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_is_canonical(ep in arb_episode()) {
        let bytes = ep.encode().unwrap();
        prop_assert_eq!(&bytes[..4], EPISODE_MAGIC);
        prop_assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        prop_assert_eq!(&bytes[bytes.len() - 32..], &sha256(&bytes[..bytes.len() - 32]));
        let back = Episode::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &ep);
        prop_assert_eq!(back.encode().unwrap(), bytes);
    }
}

#[test]
fn corruption_errors_are_distinct() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let ep = loop {
        let ep = arb_episode().new_tree(&mut runner).unwrap().current();
        if ep.samples.len() >= 2 {
            break ep;
        }
    };
    let bytes = ep.encode().unwrap();
    assert_eq!(Episode::decode(&bytes[..bytes.len() - 10]), Err(EpisodeError::Truncated));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(Episode::decode(&bad), Err(EpisodeError::BadMagic));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert_eq!(Episode::decode(&bad), Err(EpisodeError::UnsupportedVersion(2)));
    let mut bad = bytes.clone();
    let k = bad.len() - 40;
    bad[k] ^= 1;
    assert_eq!(Episode::decode(&bad), Err(EpisodeError::DigestMismatch));
}
