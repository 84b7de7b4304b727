use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Probability rows indexed by a latent-class tuple `(i, h2, ..., hq)`.
///
/// Rows are stored flat in mixed-radix order over `class_dims`; every row
/// holds `num_states` entries. JSON form is the nested array
/// `[i][h2]...[hq][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowTensor {
    class_dims: Vec<usize>,
    num_states: usize,
    data: Vec<f64>,
}

impl RowTensor {
    pub fn zeros(class_dims: &[usize], num_states: usize) -> Self {
        let rows: usize = class_dims.iter().product();
        RowTensor {
            class_dims: class_dims.to_vec(),
            num_states,
            data: vec![0.0; rows * num_states],
        }
    }

    pub fn filled(class_dims: &[usize], num_states: usize, value: f64) -> Self {
        let mut t = Self::zeros(class_dims, num_states);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn class_dims(&self) -> &[usize] {
        &self.class_dims
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.num_states.max(1)
    }

    /// Mixed-radix row index of a class tuple.
    pub fn row_index(&self, classes: &[usize]) -> usize {
        debug_assert_eq!(classes.len(), self.class_dims.len());
        classes
            .iter()
            .zip(&self.class_dims)
            .fold(0, |acc, (&h, &k)| {
                debug_assert!(h < k);
                acc * k + h
            })
    }

    /// Class tuple of a flat row index (inverse of [`RowTensor::row_index`]).
    pub fn row_classes(&self, mut row: usize) -> Vec<usize> {
        let mut out = vec![0; self.class_dims.len()];
        for (slot, &k) in out.iter_mut().zip(&self.class_dims).rev() {
            *slot = row % k;
            row /= k;
        }
        out
    }

    /// The lag-1 class of a row, which for HOHSMM rows is the previous state.
    pub fn leading_class(&self, row: usize) -> usize {
        let trailing: usize = self.class_dims[1..].iter().product();
        row / trailing
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.num_states;
        &self.data[row * c..(row + 1) * c]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let c = self.num_states;
        &mut self.data[row * c..(row + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.num_states)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn to_value(&self, depth: usize, offset: usize) -> Value {
        if depth == self.class_dims.len() {
            let row = self.row(offset);
            return Value::Array(row.iter().map(|&x| Value::from(x)).collect());
        }
        let k = self.class_dims[depth];
        Value::Array(
            (0..k)
                .map(|h| self.to_value(depth + 1, offset * k + h))
                .collect(),
        )
    }

    /// Parse the nested-array JSON form; `depth` is the number of class axes.
    pub fn from_value(value: &Value, depth: usize) -> Result<Self, String> {
        let mut dims = Vec::with_capacity(depth);
        let mut cursor = value;
        for _ in 0..depth {
            let arr = cursor.as_array().ok_or("expected nested array")?;
            if arr.is_empty() {
                return Err("empty class axis".into());
            }
            dims.push(arr.len());
            cursor = &arr[0];
        }
        let num_states = cursor.as_array().ok_or("expected probability row")?.len();
        let mut data = Vec::new();
        fn walk(
            v: &Value,
            dims: &[usize],
            num_states: usize,
            data: &mut Vec<f64>,
        ) -> Result<(), String> {
            let arr = v.as_array().ok_or("expected array")?;
            match dims.split_first() {
                Some((&k, rest)) => {
                    if arr.len() != k {
                        return Err(format!("ragged axis: {} vs {}", arr.len(), k));
                    }
                    arr.iter().try_for_each(|x| walk(x, rest, num_states, data))
                }
                None => {
                    if arr.len() != num_states {
                        return Err("ragged probability row".into());
                    }
                    for x in arr {
                        data.push(x.as_f64().ok_or("non-numeric entry")?);
                    }
                    Ok(())
                }
            }
        }
        walk(value, &dims, num_states, &mut data)?;
        Ok(RowTensor {
            class_dims: dims,
            num_states,
            data,
        })
    }

    /// Depth of a nested-array JSON value (class axes, excluding the state axis).
    fn nesting_depth(value: &Value) -> usize {
        let mut depth = 0;
        let mut cursor = value;
        while let Some(first) = cursor.as_array().and_then(|a| a.first()) {
            if first.is_array() {
                depth += 1;
                cursor = first;
            } else {
                break;
            }
        }
        depth
    }
}

impl Serialize for RowTensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value(0, 0).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RowTensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        let depth = RowTensor::nesting_depth(&value);
        RowTensor::from_value(&value, depth).map_err(D::Error::custom)
    }
}
