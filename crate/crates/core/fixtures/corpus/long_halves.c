// args: 100000 -2345
long f(long x, long y) {
    long s = x + y;
    long p = s * 3;
    return p - x / 7;
}
