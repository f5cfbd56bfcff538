use rand::seq::SliceRandom;

use super::dataset::LabeledExample;
use crate::diffcore::RngStream;
use crate::error::{Error, Result};

/// Number of class members assigned to the training side.
///
/// `round(fraction × count)`, kept inside `[1, count − 1]` so both sides see
/// the class.
pub fn train_count(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64).round() as usize).clamp(1, count - 1)
}

/// Indices of a stratified partition: `(train, test)`, each in input order.
pub fn stratified_split_indices(labels: &[u8], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut in_train = vec![false; labels.len()];
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} member(s); need at least 2",
                members.len()
            )));
        }
        let mut rng = RngStream::new(seed, 0x5EED_0000 + class as u64);
        members.shuffle(&mut rng);
        for &i in &members[..train_count(train_fraction, members.len())] {
            in_train[i] = true;
        }
    }
    let (train, test) = (0..labels.len()).partition(|&i| in_train[i]);
    Ok((train, test))
}

/// Stratified train/test split: per class, `round(fraction × count)` members
/// go to training after a seeded shuffle.
pub fn stratified_split(
    examples: &[LabeledExample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let (train, test) = stratified_split_indices(&labels, train_fraction, seed)?;
    Ok((
        train.iter().map(|&i| examples[i].clone()).collect(),
        test.iter().map(|&i| examples[i].clone()).collect(),
    ))
}
