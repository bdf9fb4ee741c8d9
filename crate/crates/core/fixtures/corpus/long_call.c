// args: 300
long mul(long a, int b) { return a * (long)b; }
int f(int k) {
    long r = mul(1000, k);
    return (int)(r / 1000) + (int)(r - r / 7 * 7);
}
