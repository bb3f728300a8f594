use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            bail!(
                Shape,
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            );
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![T::zero(); n],
        }
    }

    /// Stacks equally long rows into an `rows x cols` matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != cols {
                bail!(
                    Shape,
                    "row {i} has {} columns, expected {cols}",
                    r.as_ref().len()
                );
            }
            values.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            values,
        })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of the trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows in reverse order.
    pub fn reversed_rows(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for i in (0..self.rows()).rev() {
            values.extend_from_slice(self.row(i));
        }
        Self {
            shape: self.shape.clone(),
            values,
        }
    }

    /// Requires a 2-D tensor with `cols` columns.
    pub(crate) fn expect_matrix(&self, cols: usize, what: &str) -> Result<()> {
        if self.shape.len() != 2 || self.shape[1] != cols {
            bail!(Shape, "{what}: expected [n, {cols}], got {:?}", self.shape);
        }
        Ok(())
    }
}

/// Elementwise sum; the additive aggregation of tail and auxiliary outputs.
pub fn aggregate_add<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    if u.shape() != v.shape() {
        bail!(
            Shape,
            "cannot aggregate {:?} with {:?}",
            u.shape(),
            v.shape()
        );
    }
    let values = u
        .values()
        .iter()
        .zip(v.values())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor::new(u.shape().to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f64; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0f64; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
    }

    #[test]
    fn add_identity_and_commutativity() {
        let u = Tensor::matrix(2, 2, vec![1.0f64, -2.0, 3.5, 0.25]).unwrap();
        let z = Tensor::zeros(vec![2, 2]);
        let v = Tensor::matrix(2, 2, vec![0.5f64, 0.5, -1.0, 2.0]).unwrap();
        assert_eq!(aggregate_add(&u, &z).unwrap(), u);
        assert_eq!(
            aggregate_add(&u, &v).unwrap(),
            aggregate_add(&v, &u).unwrap()
        );
    }

    #[test]
    fn add_rejects_transposed_shapes() {
        let a = Tensor::<f64>::zeros(vec![3, 4]);
        let b = Tensor::<f64>::zeros(vec![4, 3]);
        assert!(matches!(aggregate_add(&a, &b), Err(crate::Error::Shape(_))));
    }
}
