# Worker module for stratum processing
