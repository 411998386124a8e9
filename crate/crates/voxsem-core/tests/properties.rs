//! Randomized invariants over the core volume types.

use proptest::prelude::*;

use voxsem_core::grid::{GridSpec, LabelVolume, MaskVolume, IGNORE_LABEL};
use voxsem_core::io::{parse_volume, VgridVolume};
use voxsem_core::loss::entropy;
use voxsem_core::tsdf::{tsdf_from_mask, tsdf_oracle, Visibility, VisibilityVolume};

fn arb_spec() -> impl Strategy<Value = GridSpec> {
    (1usize..6, 1usize..6, 1usize..6, 1u32..50).prop_map(|(x, y, z, vs)| {
        GridSpec::new([x, y, z], vs as f32 * 0.01, [-0.3, 0.0, 1.7]).unwrap()
    })
}

proptest! {
    #[test]
    fn vgrid_round_trip_is_bit_exact(
        spec in arb_spec(),
        channels in 1usize..4,
        kind in 0u8..4,
        seed in any::<u32>(),
    ) {
        let n = spec.len();
        let volume = match kind {
            0 => VgridVolume::Feature {
                channels,
                spec,
                data: (0..channels * n).map(|i| ((i as u32 ^ seed) as f32).sin()).collect(),
            },
            1 => VgridVolume::Label {
                spec,
                data: (0..n).map(|i| ((i as u32 ^ seed) % 13) as u8).collect(),
            },
            2 => VgridVolume::Tsdf {
                spec,
                data: (0..n).map(|i| ((i as u32 ^ seed) as f32).cos()).collect(),
            },
            _ => VgridVolume::Prob {
                channels,
                spec,
                data: (0..channels * n).map(|i| 1.0 / (1.0 + (i as u32 ^ seed) as f32)).collect(),
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vgrid");
        voxsem_core::io::save_volume(&path, &volume).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        prop_assert_eq!(&parse_volume(&bytes).unwrap(), &volume);
        voxsem_core::io::save_volume(&path, &parse_volume(&bytes).unwrap()).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn world_voxel_round_trip_on_centers(spec in arb_spec()) {
        for idx in spec.indices() {
            let center = spec.voxel_to_world(idx).unwrap();
            prop_assert_eq!(spec.world_to_voxel(center), Some(idx));
        }
    }

    #[test]
    fn downsample_majority_is_from_the_block(labels in prop::collection::vec(0u8..12, 64)) {
        let spec = GridSpec::new([4, 4, 4], 1.0, [0.0; 3]).unwrap();
        let mut labels = labels;
        labels[7] = IGNORE_LABEL; // mix one ignore in
        let volume = LabelVolume::new(spec, labels).unwrap();
        let down = volume.downsample(2).unwrap();
        for [ox, oy, oz] in down.spec().indices() {
            let winner = down.get([ox, oy, oz]);
            let mut block = Vec::new();
            for ix in 0..2 {
                for iy in 0..2 {
                    for iz in 0..2 {
                        block.push(volume.get([ox * 2 + ix, oy * 2 + iy, oz * 2 + iz]));
                    }
                }
            }
            prop_assert!(block.contains(&winner));
        }
        prop_assert_eq!(volume.downsample(1).unwrap().values(), volume.values());
    }

    #[test]
    fn entropy_is_bounded_by_ln_k(raw in prop::collection::vec(1e-6f64..1.0, 2..13)) {
        let sum: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let h = entropy(&p).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn tsdf_fast_path_matches_oracle(
        sites in prop::collection::vec(0usize..216, 1..12),
        splits in prop::collection::vec(0u8..3, 216),
    ) {
        let spec = GridSpec::new([6, 6, 6], 0.1, [0.0; 3]).unwrap();
        let mut mask = MaskVolume::filled(spec, false);
        for &s in &sites {
            mask.values_mut()[s] = true;
        }
        let vis: Vec<Visibility> = splits
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                if mask.values()[i] {
                    Visibility::Surface
                } else {
                    match s {
                        0 => Visibility::Free,
                        1 => Visibility::Occluded,
                        _ => Visibility::Outside,
                    }
                }
            })
            .collect();
        let vis = VisibilityVolume::new(spec, vis).unwrap();
        let fast = tsdf_from_mask(&mask, &vis, 0.35).unwrap();
        let slow = tsdf_oracle(&mask, &vis, 0.35).unwrap();
        for (a, b) in fast.values().iter().zip(slow.values()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
