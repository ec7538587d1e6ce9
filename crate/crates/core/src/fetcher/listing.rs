use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use url::Url;

use super::session::{url_path, Fetcher};
use super::FetchStatus;
use crate::compliance::{is_allowed, RobotsPolicy};
use crate::extractor::{extract_links, ExtractionRuleSet};

pub const DEFAULT_URL_TEMPLATE: &str = "/liste/{place}/{object}/sort-{sort}/page-1.html";

/// A result-list query expressed through the site's URL scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub base_url: Url,
    pub place: String,
    pub object_type: String,
    /// Each order is walked separately; more orders give better coverage
    /// when the site caps the number of result pages.
    #[serde(default)]
    pub sort_orders: Vec<String>,
    #[serde(default = "default_template")]
    pub url_template: String,
    #[serde(default = "default_max_pages")]
    pub max_pages: usize,
}

fn default_template() -> String {
    DEFAULT_URL_TEMPLATE.to_string()
}

fn default_max_pages() -> usize {
    1000
}

impl SearchQuery {
    pub fn first_page_urls(&self) -> Vec<Url> {
        let orders: Vec<&str> = if self.sort_orders.is_empty() {
            vec!["relevance"]
        } else {
            self.sort_orders.iter().map(String::as_str).collect()
        };
        orders
            .into_iter()
            .filter_map(|sort| {
                let path = self
                    .url_template
                    .replace("{place}", &self.place)
                    .replace("{object}", &self.object_type)
                    .replace("{sort}", sort);
                self.base_url.join(&path).ok()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub listing_urls: Vec<Url>,
    pub pages_fetched: usize,
    pub warnings: Vec<String>,
}

/// Walk every sort order's result pages by following pagination links and
/// collect listing URLs, de-duplicated in first-seen order.
pub fn enumerate_listings(
    fetcher: &mut Fetcher,
    query: &SearchQuery,
    rules: &ExtractionRuleSet,
    policy: &RobotsPolicy,
) -> Enumeration {
    let mut out = Enumeration::default();
    let (Some(listing_sel), pagination_sel) = (rules.link_rules().listing.clone(), rules.link_rules().pagination.clone())
    else {
        out.warnings.push("rule set has no listing link selector".into());
        return out;
    };
    let mut seen_listing = HashSet::new();
    let mut seen_page = HashSet::new();
    for first in query.first_page_urls() {
        let mut next = Some(first);
        let mut pages = 0;
        while let Some(page) = next.take() {
            if pages >= query.max_pages || !seen_page.insert(page.to_string()) {
                break;
            }
            if !is_allowed(policy, &url_path(&page), fetcher.user_agent()) {
                out.warnings.push(format!("result page disallowed by robots.txt: {page}"));
                break;
            }
            let r = fetcher.fetch(&page);
            if r.status != FetchStatus::Ok {
                out.warnings.push(format!("result page {page} failed: {}", r.status.label()));
                break;
            }
            pages += 1;
            out.pages_fetched += 1;
            let body = r.body.unwrap_or_default();
            for u in extract_links(&body, &listing_sel, &page).unwrap_or_default() {
                if seen_listing.insert(u.to_string()) {
                    out.listing_urls.push(u);
                }
            }
            next = pagination_sel
                .as_deref()
                .and_then(|sel| extract_links(&body, sel, &page).ok())
                .and_then(|v| v.into_iter().next());
        }
    }
    if out.pages_fetched == 0 {
        out.warnings.push("no result pages could be fetched".into());
    } else if out.listing_urls.is_empty() {
        out.warnings.push("result pages contained no listing links".into());
    }
    for w in &out.warnings {
        fetcher.warn(query.base_url.as_str(), w.clone());
    }
    out
}
