# Centre profiling: empirical Bayes monitoring of centre performance
