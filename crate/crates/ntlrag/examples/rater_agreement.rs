//! Score a human rating study: Krippendorff's alpha per label kind and
//! rater group, plus the narrative-versus-keywords preference breakdown.
//!
//! ```bash
//! cargo run -p ntlrag --example rater_agreement
//! ```

use std::path::Path;

use ntlrag::evaluation::{
    evaluate_dataset, krippendorff_alpha, read_ratings_csv, render_eval_table, AlphaMetric,
    LabelKind, RatingRecord, ReliabilityMatrix,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ratings");
    let records = read_ratings_csv(&fixtures.join("fixture.csv"))?;
    let dataset = evaluate_dataset("fixture", &records, AlphaMetric::Ordinal);
    print!("{}", render_eval_table(std::slice::from_ref(&dataset)));

    if let Some(pref) = &dataset.preference {
        println!("\nnarrative mean {:.3} vs keywords mean {:.3}", pref.mean_narrative, pref.mean_keywords);
        println!(
            "per rating pair: narrative same-or-higher {:.1}%, strictly higher {:.1}%",
            pref.same_or_higher_pct, pref.strictly_preferred_pct
        );
        println!(
            "per item (averaged over raters): same-or-higher {:.1}%, strictly higher {:.1}%",
            pref.item_same_or_higher_pct, pref.item_strictly_preferred_pct
        );
    }

    // Alpha is also available directly, without the CSV layer.
    let toy: Vec<RatingRecord> = [("a", 1u8), ("b", 2), ("c", 3)]
        .into_iter()
        .flat_map(|(item, score)| {
            ["r1", "r2"].map(|rater| RatingRecord {
                rater_id: rater.into(),
                item_id: item.into(),
                label_kind: LabelKind::Narrative,
                score,
                expert: false,
            })
        })
        .collect();
    let matrix = ReliabilityMatrix::from_records(&toy, LabelKind::Narrative);
    let alpha = krippendorff_alpha(&matrix, AlphaMetric::Ordinal)?;
    println!("\ntwo raters in perfect agreement: alpha = {}", alpha.value);
    Ok(())
}
