//! Rule families: k-nearest neighbors, pruned CART, local polynomials.

pub mod cart;
pub mod knn;
pub mod localpoly;

pub use cart::{cart_family, cart_grow, cart_prune_path, cart_rule, CartRule, CartTree, PrunePath};
pub use knn::{knn_family, knn_train, KnnRule};
pub use localpoly::{localpoly_eta, localpoly_rule, lp_collection, LocalPolyRule};
