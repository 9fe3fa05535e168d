use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

/// A diversity aspect with its display name and value list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectSpec {
    pub key: &'static str,
    pub display: &'static str,
    pub values: &'static [&'static str],
}

const CATALOG: &[AspectSpec] = &[
    AspectSpec {
        key: "customer_type",
        display: "Customer type",
        values: &["Retail", "Small Business", "High Net-worth", "Students", "Seniors"],
    },
    AspectSpec {
        key: "cultural_type",
        display: "Cultural background",
        values: &["Western", "Eastern", "Middle Eastern", "Latin", "African", "Asian"],
    },
    AspectSpec {
        key: "expertise",
        display: "Educational or professional expertise",
        values: &["Students", "non-experts", "Finance Professionals", "Tech-savvy users"],
    },
    AspectSpec {
        key: "grammatical_aspect",
        display: "Grammar and style",
        values: &[
            "Perfect Grammar",
            "Casual",
            "Typos and Errors",
            "Short & Concise",
            "Long & Detailed",
        ],
    },
    AspectSpec {
        key: "specificity",
        display: "Specificity",
        values: &["Highly Specific", "Vague"],
    },
    AspectSpec {
        key: "hypothetical_vs_practical",
        display: "Hypothetical or practical",
        values: &["Hypothetical", "Practical"],
    },
    AspectSpec {
        key: "rarity",
        display: "Rarity",
        values: &["Common", "Unusual", "Edge Cases"],
    },
    AspectSpec {
        key: "product_or_service",
        display: "Product or service",
        values: &["Transactions", "Savings", "Loans", "Investments", "Cards", "Online"],
    },
    AspectSpec {
        key: "emotional_tone",
        display: "Emotional tone",
        values: &["Happy", "Neutral", "Frustrated", "Confused", "Anxious", "Impatient"],
    },
    AspectSpec {
        key: "urgency",
        display: "Urgency",
        values: &[
            "Immediate Assistance",
            "General",
            "Scheduled/Planned Actions",
            "Follow-Up",
        ],
    },
    AspectSpec {
        key: "financial_literacy",
        display: "Financial literacy",
        values: &["Novice", "Intermediate", "Advanced", "Mis-guided"],
    },
];

pub fn aspect_catalog() -> &'static [AspectSpec] {
    CATALOG
}

pub(crate) fn display_name(key: &str) -> &str {
    CATALOG
        .iter()
        .find(|a| a.key == key)
        .map(|a| a.display)
        .unwrap_or(key)
}

/// Draw 1 to 3 distinct catalog aspects, each with a uniform value.
pub fn sample_aspects<R: Rng + ?Sized>(rng: &mut R) -> BTreeMap<String, String> {
    let count = rng.random_range(1..=3);
    sample(rng, CATALOG.len(), count)
        .into_iter()
        .map(|i| {
            let spec = &CATALOG[i];
            let value = spec.values[rng.random_range(0..spec.values.len())];
            (spec.key.to_string(), value.to_string())
        })
        .collect()
}
