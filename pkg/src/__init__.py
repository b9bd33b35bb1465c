# Phase-field flow optimizer package
