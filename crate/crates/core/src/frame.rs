//! Racket/target frame conventions.
//!
//! A target orientation has its +z axis along the incoming flight direction,
//! so the racket face normal is the frame's -z axis. Roll about z is fixed by
//! putting the frame's y axis as close to world +y as possible.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

/// Orientation whose +z axis is `direction` and whose y axis has maximal
/// projection on world +y. `direction` must be non-zero.
pub fn frame_from_z(direction: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = direction.normalize();
    let world_y = Vector3::y();
    let mut y = world_y - z * z.dot(&world_y);
    if y.norm() < 1e-9 {
        // direction is (anti)parallel to world y; fall back to world z
        let world_z = Vector3::z();
        y = world_z - z * z.dot(&world_z);
    }
    let y = y.normalize();
    let x = y.cross(&z);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

pub fn x_axis(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q * Vector3::x()
}

pub fn y_axis(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q * Vector3::y()
}

pub fn z_axis(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q * Vector3::z()
}

/// Racket face normal: the frame's -z axis.
pub fn face_normal(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    -z_axis(q)
}

/// `[x, y, z, w]` component order used on every wire format.
pub fn quat_to_xyzw(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

pub fn quat_from_xyzw(c: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(c[3], c[0], c[1], c[2]))
}
