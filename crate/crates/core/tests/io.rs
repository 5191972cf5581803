//! Serialization round trips over random contents.

use std::path::Path;

use proptest::prelude::*;

use depthcal::calib::CornerGrid;
use depthcal::geometry::{CameraIntrinsics, DepthImage, RigidTransform, Vec2, Vec3};
use depthcal::io::{
    decode_depth_pgm, encode_depth_pgm, parse_corners_csv, render_corners_csv, Calibration, DatasetManifest, FrameEntry,
};
use depthcal::maps::{GlobalMap, PolyFn};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3f64..1e3, -1e-6f64..1e-6, Just(0.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibration_text_round_trips(
        coeffs in proptest::collection::vec(finite(), 3 * 3 * 3),
        g in proptest::collection::vec(finite(), 6),
        rv in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
        t in (finite(), finite(), finite()),
        k in (100.0f64..900.0, 100.0f64..900.0, 1.0f64..15.0, 1.0f64..11.0),
    ) {
        let depth = CameraIntrinsics::pinhole(k.0, k.1, k.2, k.3, 16, 12).unwrap();
        let rgb = CameraIntrinsics::new(k.1, k.0, k.2, k.3, [g[0] * 1e-3, 0.0, 1e-5], [g[1] * 1e-4, 0.0], 16, 12).unwrap();
        let mut c = Calibration::identity(depth, rgb, (8, 8), 2).unwrap();
        for (n, chunk) in coeffs.chunks(3).enumerate() {
            c.undistortion.set_function(n % 3, n / 3, PolyFn::new(chunk.to_vec(), false).unwrap()).unwrap();
        }
        c.global = GlobalMap::from_free_params(16, 12, 2, &g).unwrap();
        c.extrinsic = RigidTransform::from_rotation_vector(&Vec3::new(rv.0, rv.1, rv.2), Vec3::new(t.0, t.1, t.2));
        let text = c.to_text();
        let back = Calibration::parse(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn depth_images_round_trip(mm in proptest::collection::vec(any::<u16>(), 12)) {
        let img = DepthImage::new(4, 3, mm.iter().map(|&v| v as f64 / 1000.0).collect()).unwrap();
        let bytes = encode_depth_pgm(&img);
        let back = decode_depth_pgm(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(encode_depth_pgm(&back), bytes);
    }

    #[test]
    fn corners_round_trip(px in proptest::collection::vec((0.0f64..640.0, 0.0f64..480.0), 12)) {
        let grid = CornerGrid::new(3, 4, px.iter().map(|&(u, v)| Vec2::new(u, v)).collect()).unwrap();
        prop_assert_eq!(parse_corners_csv(&render_corners_csv(&grid), Path::new("mem")).unwrap(), grid);
    }

    #[test]
    fn manifests_round_trip(dist in proptest::collection::vec(proptest::option::of(0.5f64..5.0), 1..6)) {
        let k = CameraIntrinsics::pinhole(285.0, 285.0, 159.5, 119.5, 320, 240).unwrap();
        let m = DatasetManifest {
            board: depthcal::calib::BoardSpec::new(6, 8, 0.06).unwrap(),
            intr_rgb: k,
            intr_depth: k,
            extrinsic_guess: RigidTransform::from_translation(Vec3::new(0.025, 0.0, 0.0)),
            sigma_c: 0.2,
            frames: dist
                .iter()
                .enumerate()
                .map(|(id, &d)| FrameEntry {
                    id,
                    depth_file: format!("d{id}.pgm"),
                    corners_file: format!("c{id}.csv"),
                    true_distance: d,
                })
                .collect(),
        };
        prop_assert_eq!(DatasetManifest::parse(&m.to_text(), Path::new("mem")).unwrap(), m);
    }
}
