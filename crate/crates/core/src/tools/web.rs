//! External text retrieval: query the search backend and wrap the top-ranked
//! results as the `{search_query, search_result}` observation object.

use crate::backends::SearchBackend;

use super::ToolError;

pub const MAX_RESULTS: usize = 10;

/// Run a query and build the observation payload. At most [`MAX_RESULTS`]
/// items are kept and ids are renumbered 1.. in rank order.
pub async fn web_search(
    query: &str,
    backend: &dyn SearchBackend,
) -> Result<serde_json::Value, ToolError> {
    let mut items = backend.search(query).await?;
    items.truncate(MAX_RESULTS);
    for (i, item) in items.iter_mut().enumerate() {
        item.id = i as u32 + 1;
    }
    Ok(serde_json::json!({
        "search_query": query,
        "search_result": items,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{SearchBackend, TransportError};
    use crate::tools::SearchResultItem;

    struct Canned(Vec<SearchResultItem>);

    #[async_trait::async_trait]
    impl SearchBackend for Canned {
        async fn search(&self, _query: &str) -> Result<Vec<SearchResultItem>, TransportError> {
            Ok(self.0.clone())
        }
    }

    fn item(title: &str) -> SearchResultItem {
        SearchResultItem {
            id: 99,
            title: title.into(),
            content: format!("{title} content"),
            url: format!("https://example.com/{title}"),
            date: None,
        }
    }

    #[tokio::test]
    async fn caps_at_ten_and_renumbers() {
        let backend = Canned((0..15).map(|i| item(&format!("t{i}"))).collect());
        let value = web_search("q", &backend).await.unwrap();
        let results = value["search_result"].as_array().unwrap();
        assert_eq!(results.len(), MAX_RESULTS);
        for (i, r) in results.iter().enumerate() {
            assert_eq!(r["id"], (i + 1) as u64);
        }
        assert_eq!(value["search_query"], "q");
    }

    #[tokio::test]
    async fn empty_results_are_not_an_error() {
        let backend = Canned(vec![]);
        let value = web_search("nothing", &backend).await.unwrap();
        assert_eq!(value["search_result"].as_array().unwrap().len(), 0);
    }
}
