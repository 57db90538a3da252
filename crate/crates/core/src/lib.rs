//! Storage, rights and discovery for page-granular, access-restricted text
//! collections, plus the federated layer that ties them together.

pub mod corpus;
pub mod federated;
pub mod index;
pub mod rights;
pub mod store;
