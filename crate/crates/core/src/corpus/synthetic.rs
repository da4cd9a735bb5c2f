use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::{Attribute, ProductRecord};

const CATEGORIES: [&str; 4] = ["dress", "shirt", "coat", "skirt"];
const COLORS: [&str; 8] = ["red", "blue", "black", "white", "green", "grey", "navy", "pink"];
const MATERIALS: [&str; 6] = ["silk", "cotton", "linen", "wool", "denim", "satin"];
const FITS: [&str; 4] = ["slim", "loose", "regular", "relaxed"];
const SLOGANS: [&str; 4] = ["made for summer", "easy to wear", "soft and light", "a daily classic"];

/// Seeded product records whose descriptions are a fixed function of the
/// attributes; every value in a description also appears in the input.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<ProductRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let category = *CATEGORIES.choose(&mut rng).expect("non-empty");
            let color = *COLORS.choose(&mut rng).expect("non-empty");
            let material = *MATERIALS.choose(&mut rng).expect("non-empty");
            let fit = *FITS.choose(&mut rng).expect("non-empty");
            let slogan = *SLOGANS.choose(&mut rng).expect("non-empty");
            let length = rng.gen_range(6..13) * 10;
            ProductRecord {
                sku: format!("sku-{seed}-{i:04}"),
                title: format!("{color} {material} {category}"),
                attrs: vec![
                    Attribute::new("color", color),
                    Attribute::new("material", material),
                    Attribute::new("fit", fit),
                    Attribute::new("length", length.to_string()),
                ],
                slogan: slogan.to_owned(),
                category: category.to_owned(),
                description: Some(format!(
                    "this {fit} {category} in {color} {material} is {length} cm long ."
                )),
                extra_text: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_self_consistent() {
        let a = synthetic_records(10, 3);
        assert_eq!(a, synthetic_records(10, 3));
        assert_ne!(a, synthetic_records(10, 4));
        for r in &a {
            r.validate().unwrap();
            let input = r.input_text();
            for w in r.description.as_ref().unwrap().split_whitespace() {
                if w.chars().all(|c| c.is_ascii_digit()) {
                    assert!(input.contains(w));
                }
            }
        }
    }
}
