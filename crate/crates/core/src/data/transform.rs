//! The eight symmetries of the square acting on the spatial axes.

use crate::data::image::ImagePlane;
use crate::tensor::{Float, Shape, Tensor};

/// Element `id = rotations + 4·flip` of the dihedral group: an optional
/// horizontal flip followed by `rotations` quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GeometricTransform(u8);

impl GeometricTransform {
    pub const IDENTITY: GeometricTransform = GeometricTransform(0);

    pub fn new(id: u8) -> Option<Self> {
        (id < 8).then_some(GeometricTransform(id))
    }

    pub fn all() -> impl Iterator<Item = GeometricTransform> {
        (0..8).map(GeometricTransform)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn rotations(self) -> u8 {
        self.0 % 4
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    fn from_parts(rotations: u8, flipped: bool) -> Self {
        GeometricTransform(rotations % 4 + if flipped { 4 } else { 0 })
    }

    pub fn inverse(self) -> Self {
        if self.flipped() {
            self
        } else {
            Self::from_parts((4 - self.rotations()) % 4, false)
        }
    }

    /// The transform equal to applying `self` first and then `next`.
    pub fn then(self, next: GeometricTransform) -> Self {
        // F·R^k = R^{-k}·F
        let carried = if next.flipped() { (4 - self.rotations()) % 4 } else { self.rotations() };
        Self::from_parts(next.rotations() + carried, self.flipped() ^ next.flipped())
    }

    pub fn apply<T: Float>(self, t: &Tensor<T>) -> Tensor<T> {
        let mut out = if self.flipped() { flip_horizontal(t) } else { t.clone() };
        for _ in 0..self.rotations() {
            out = rotate_ccw(&out);
        }
        out
    }

    pub fn invert<T: Float>(self, t: &Tensor<T>) -> Tensor<T> {
        self.inverse().apply(t)
    }

    pub fn apply_image(self, img: &ImagePlane) -> ImagePlane {
        ImagePlane::from_tensor(&self.apply(&img.to_tensor())).expect("single item")
    }

    pub fn invert_image(self, img: &ImagePlane) -> ImagePlane {
        self.inverse().apply_image(img)
    }
}

fn flip_horizontal<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| t.at(n, c, y, s.w - 1 - x)).expect("same shape")
}

/// Quarter turn counter-clockwise: `out[i][j] = in[j][w-1-i]`, `h×w → w×h`.
fn rotate_ccw<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, i, j| t.at(n, c, j, s.w - 1 - i))
        .expect("non-empty")
}
