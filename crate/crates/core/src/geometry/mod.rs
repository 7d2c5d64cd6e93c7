//! Camera model, geocentric frames, backprojection and normal images.

mod camera;
mod crop;
mod frame;
mod image;
mod normals;

pub use camera::{CameraIntrinsics, DEFAULT_DISPARITY_CONSTANT};
pub use crop::{crop_and_warp, Resample};
pub use frame::{rotation_about, world_up, wrap_angle, yaw_rotation, GeocentricFrame};
pub use image::{backproject, DepthImage, Mask, PixelBox, PointCloud};
pub use normals::{decode_angle, encode_angle, encode_normal_image, estimate_normals, NormalImage, NormalMap, NormalParams, ANGLE_OFFSET};

/// Disparity for depth `z` under `k`'s disparity constant.
pub fn disparity(z: f64, k: &CameraIntrinsics) -> Option<f64> {
    k.disparity(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disparity_values() {
        let k = CameraIntrinsics::kinect();
        assert!((disparity(3.0, &k).unwrap() - 105.0).abs() < 1e-12);
        assert!((disparity(1.5, &k).unwrap() - 210.0).abs() < 1e-12);
        let gap = disparity(3.0, &k).unwrap() - disparity(3.2, &k).unwrap();
        assert!((6.0..=8.0).contains(&gap), "{gap}");
        assert!(disparity(0.0, &k).is_none());
    }

    proptest::proptest! {
        #[test]
        fn disparity_strictly_decreasing(a in 0.05f64..20.0, d in 1e-6f64..5.0) {
            let k = CameraIntrinsics::kinect();
            proptest::prop_assert!(disparity(a, &k).unwrap() > disparity(a + d, &k).unwrap());
        }
    }
}
