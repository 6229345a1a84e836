use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, InteractionRecord, Schema, Side};

/// Collision retries per row before an in-batch negative is dropped.
pub const NEGATIVE_RETRIES: usize = 10;

/// Rows gathered into flat row-major code matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Source row of each batch row.
    pub rows: Vec<usize>,
    /// `rows.len() × n_fields` codes.
    pub codes: Vec<u32>,
    pub n_fields: usize,
    pub clicks: Vec<bool>,
    pub conversions: Vec<bool>,
}

impl Batch {
    pub fn gather(records: &[InteractionRecord], rows: Vec<usize>) -> Self {
        let n_fields = records.first().map_or(0, |r| r.codes.len());
        let mut codes = Vec::with_capacity(rows.len() * n_fields);
        for &r in &rows {
            codes.extend_from_slice(&records[r].codes);
        }
        Self {
            clicks: rows.iter().map(|&r| records[r].click).collect(),
            conversions: rows.iter().map(|&r| records[r].conversion).collect(),
            rows,
            codes,
            n_fields,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_codes(&self, i: usize) -> &[u32] {
        &self.codes[i * self.n_fields..(i + 1) * self.n_fields]
    }

    pub fn click_count(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}

/// Shuffles rows with `seed` and cuts them into batches of `batch_size`
/// (the last one may be shorter). Every row lands in exactly one batch.
pub fn make_batches(records: &[InteractionRecord], batch_size: usize, seed: u64) -> Result<Vec<Batch>, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchSize(batch_size));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(|c| Batch::gather(records, c.to_vec())).collect())
}

/// Batches in file order, for evaluation passes.
pub fn sequential_batches(records: &[InteractionRecord], batch_size: usize) -> Result<Vec<Batch>, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchSize(batch_size));
    }
    let order: Vec<usize> = (0..records.len()).collect();
    Ok(order.chunks(batch_size).map(|c| Batch::gather(records, c.to_vec())).collect())
}

/// Positive exposures plus sampled negatives for the exposure task.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureBatch {
    pub codes: Vec<u32>,
    pub n_fields: usize,
    pub labels: Vec<bool>,
    pub positives: usize,
    pub negatives: usize,
    /// Rows whose negative could not be drawn without colliding with an
    /// observed pair.
    pub skipped: usize,
}

impl ExposureBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// For each row, keeps the user-side fields and borrows the item-side fields
/// of another row in the batch. A candidate `(user, item)` pair that appears
/// among the batch positives is rejected and redrawn.
pub fn in_batch_negatives<R: Rng + ?Sized>(batch: &Batch, schema: &Schema, rng: &mut R) -> ExposureBatch {
    let n = batch.len();
    let nf = batch.n_fields;
    let (ui, ii) = (schema.user_id_index(), schema.item_id_index());
    let item_fields = schema.side_indices(Side::Item);
    let seen: HashSet<(u32, u32)> = (0..n)
        .map(|r| {
            let c = batch.row_codes(r);
            (c[ui], c[ii])
        })
        .collect();

    let mut codes = batch.codes.clone();
    let mut labels = vec![true; n];
    let mut skipped = 0;
    for i in 0..n {
        let user = batch.row_codes(i)[ui];
        let partner = (n >= 2)
            .then(|| {
                (0..NEGATIVE_RETRIES).find_map(|_| {
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    (!seen.contains(&(user, batch.row_codes(j)[ii]))).then_some(j)
                })
            })
            .flatten();
        let Some(j) = partner else {
            skipped += 1;
            continue;
        };
        let mut row = batch.row_codes(i).to_vec();
        for &f in &item_fields {
            row[f] = batch.row_codes(j)[f];
        }
        codes.extend_from_slice(&row);
        labels.push(false);
    }
    debug_assert_eq!(codes.len(), labels.len() * nf);
    ExposureBatch {
        codes,
        n_fields: nf,
        positives: n,
        negatives: labels.len() - n,
        labels,
        skipped,
    }
}
