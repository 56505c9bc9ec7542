use super::Matrix;

/// A structure holding named trainable tensors.
///
/// Gradient accumulators are values of the same type, so two values can be
/// walked in lockstep: `tensors()` must return the same names in the same
/// order regardless of the tensor contents.
pub trait Params {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Copy of `p` with every trainable tensor zeroed.
pub fn zeros_like<P: Params + Clone>(p: &P) -> P {
    let mut g = p.clone();
    for (_, t) in g.tensors_mut() {
        t.fill(0.0);
    }
    g
}

pub fn flatten<P: Params + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.num_params());
    for (_, t) in p.tensors() {
        out.extend_from_slice(t.data());
    }
    out
}

pub fn unflatten<P: Params + ?Sized>(p: &mut P, values: &[f64]) {
    let mut offset = 0;
    for (_, t) in p.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    assert_eq!(
        offset,
        values.len(),
        "flat parameter vector has the wrong length"
    );
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    items: Vec<(String, &'a Matrix)>,
) -> Vec<(String, &'a Matrix)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Matrix)>,
) -> Vec<(String, &'a mut Matrix)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}
