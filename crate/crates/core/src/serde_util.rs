//! Row-major nested-array (de)serialization for small matrices.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::{Mat2, Mat3};

pub mod mat2_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat2, s: S) -> Result<S::Ok, S::Error> {
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat2, D::Error> {
        let r = <[[f64; 2]; 2]>::deserialize(d)?;
        Ok(Mat2::new(r[0][0], r[0][1], r[1][0], r[1][1]))
    }
}

pub mod mat3_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        let r = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Mat3::from_fn(|i, j| r[i][j]))
    }
}
