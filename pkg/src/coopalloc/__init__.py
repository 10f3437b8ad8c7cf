"""Joint power and spectrum allocation for cooperative downlink."""
