// args: -7
long f(int a) {
    long x = (long)a;
    x = x * 40000;
    int lo = (int)x;
    return x + (long)lo;
}
