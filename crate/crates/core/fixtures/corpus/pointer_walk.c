// args:
int A[5] = {2, 3, 5, 7, 11};
int sum(restrict A int *p, int n) {
    int s = 0;
    while (n > 0) {
        s += *p;
        p++;
        n--;
    }
    return s;
}
int main(void) { return sum(&A[1], 3); }
