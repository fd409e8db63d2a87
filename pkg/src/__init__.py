"""Decision-transformer resource-management package."""
