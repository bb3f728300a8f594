use crate::scalar::Scalar;

/// Named, shaped view of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [T],
}

/// A collection of trainable parameter blocks in a fixed order.
///
/// Gradient containers implement the same trait with the same block order,
/// which is what the optimizer relies on.
pub trait Parameters<T: Scalar> {
    fn views(&self) -> Vec<ParamView<'_, T>>;

    fn blocks_mut(&mut self) -> Vec<&mut [T]>;

    fn blocks(&self) -> Vec<&[T]> {
        self.views().into_iter().map(|v| v.values).collect()
    }

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn flatten(&self) -> Vec<T> {
        self.blocks().concat()
    }

    fn fill(&mut self, value: T) {
        for b in self.blocks_mut() {
            b.fill(value);
        }
    }

    /// `self += scale * other`, block by block.
    fn add_scaled(&mut self, other: &Self, scale: T)
    where
        Self: Sized,
    {
        let src = other.blocks();
        for (dst, src) in self.blocks_mut().into_iter().zip(src) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, factor: T) {
        for b in self.blocks_mut() {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill(T::zero());
        z
    }
}

pub(crate) fn prefixed<'a, T>(prefix: &str, views: Vec<ParamView<'a, T>>) -> Vec<ParamView<'a, T>> {
    views
        .into_iter()
        .map(|v| ParamView {
            name: format!("{prefix}.{}", v.name),
            ..v
        })
        .collect()
}
